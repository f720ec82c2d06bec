//! Seeded synthetic benchmark. Pages are grids of widget groups: one
//! generic actionable element (bare "[combobox]"-style text) surrounded by
//! tightly placed theme-word labels. The instruction names one theme, so
//! the target widget is identifiable only through its spatial neighbors —
//! the planted signal the dual-view ranker exists to exploit. Everything is
//! a pure function of (config, seed).

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::document::{
    element_html_text, write_corpus, Action, BBox, Element, HtmlDocument, OpKind, Operation,
    Step, Task,
};
use crate::error::{Error, Result};
use crate::ranker::vocab::tokenize_str;
use crate::seed;
use crate::spatial::visual_neighbors;
use crate::visual::{save_image, Image};

/// Actionable tags, drawn uniformly and independently of the ground truth
/// so tag identity carries no ranking signal.
const TAGS: [&str; 6] = ["button", "combobox", "textbox", "link", "searchbox", "input"];
const LABEL_TAG: &str = "text";

const BACKGROUND: (u8, u8, u8) = (235, 235, 235);
const WIDGET_COLOR: (u8, u8, u8) = (70, 70, 70);
/// One color per theme index; every entry's channel mean is ≥ 32 intensity
/// units away from the background's.
const THEME_PALETTE: [(u8, u8, u8); 10] = [
    (178, 34, 34),
    (0, 102, 204),
    (0, 128, 0),
    (204, 102, 0),
    (102, 0, 153),
    (0, 139, 139),
    (184, 134, 11),
    (139, 0, 139),
    (70, 110, 40),
    (128, 0, 64),
];

const WIDGET_W: i64 = 48;
const WIDGET_H: i64 = 18;
const LABEL_W: i64 = 40;
const LABEL_H: i64 = 12;
/// Farthest a label pixel can sit from its group center.
const GROUP_EXTENT_X: i64 = 56 + LABEL_W / 2;
const GROUP_EXTENT_Y: i64 = 26 + LABEL_H / 2;
/// Minimum clear pixels between rectangles of different groups.
const GROUP_GAP: i64 = 6;

const GROUP_PLACE_ATTEMPTS: usize = 40;
const PAGE_ATTEMPTS: usize = 16;

/// An instruction template. `text` must mention `{w0}` and `{w1}`; TYPE and
/// SELECT templates carry an `arg` pattern that is substituted into `{arg}`,
/// making the operation argument a verbatim instruction substring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub op: OpKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<String>,
}

/// A word pool plus its instruction templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theme {
    pub name: String,
    pub words: Vec<String>,
    pub templates: Vec<Template>,
}

/// The themes bundled with the crate.
pub fn default_themes() -> Vec<Theme> {
    serde_json::from_str(include_str!("../data/themes.json")).expect("bundled themes parse")
}

/// How train and test splits are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// 80/20 over pages; both splits share all themes.
    CrossTask,
    /// 80/20 over pages AND disjoint target-theme pools between splits.
    CrossDomain,
}

impl SplitMode {
    pub fn name(self) -> &'static str {
        match self {
            SplitMode::CrossTask => "crosstask",
            SplitMode::CrossDomain => "crossdomain",
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crosstask" => Ok(SplitMode::CrossTask),
            "crossdomain" => Ok(SplitMode::CrossDomain),
            other => Err(Error::Config(format!(
                "unknown split mode {other:?} (expected crosstask or crossdomain)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub pages: usize,
    pub page_width: usize,
    pub page_height: usize,
    /// Widget groups per page (one actionable element each).
    pub widgets_per_page: usize,
    /// How many non-target groups carry other-theme labels; the rest are
    /// bare actionables.
    pub distractor_groups: usize,
    /// Upper bound on labels per labeled group (uniform 1..=M per group).
    pub m_planted: usize,
    pub themes: Vec<Theme>,
    pub split: SplitMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pages: 200,
            page_width: 800,
            page_height: 600,
            widgets_per_page: 12,
            distractor_groups: 5,
            m_planted: 3,
            themes: default_themes(),
            split: SplitMode::CrossTask,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.pages == 0 {
            return fail("pages must be ≥ 1".into());
        }
        if self.page_width < 64 || self.page_height < 64 {
            return fail(format!(
                "page dimensions must be ≥ 64 px, got {}x{}",
                self.page_width, self.page_height
            ));
        }
        if self.widgets_per_page == 0 {
            return fail("widgets_per_page must be ≥ 1".into());
        }
        if self.widgets_per_page < 2 * self.distractor_groups {
            return fail(format!(
                "widgets_per_page ({}) must be ≥ 2 × distractor_groups ({})",
                self.widgets_per_page, self.distractor_groups
            ));
        }
        if !(1..=4).contains(&self.m_planted) {
            return fail(format!("m_planted must be in 1..=4, got {}", self.m_planted));
        }
        if self.themes.is_empty() {
            return fail("at least one theme is required".into());
        }
        if self.themes.len() > THEME_PALETTE.len() {
            return fail(format!(
                "at most {} themes are supported (one color each), got {}",
                THEME_PALETTE.len(),
                self.themes.len()
            ));
        }
        if self.distractor_groups > 0 && self.themes.len() < 2 {
            return fail("distractor groups need a second theme to draw labels from".into());
        }
        if self.split == SplitMode::CrossDomain && self.themes.len() < 2 {
            return fail("crossdomain split needs at least two themes".into());
        }
        let mut seen: HashSet<&str> = HashSet::new();
        let reserved: HashSet<&str> =
            TAGS.iter().copied().chain([LABEL_TAG]).collect();
        for theme in &self.themes {
            if theme.words.len() < 4 {
                return fail(format!("theme {:?} needs ≥ 4 words", theme.name));
            }
            for w in &theme.words {
                if tokenize_str(w).len() != 1 {
                    return fail(format!(
                        "theme word {w:?} must be a single token (lowercase, no punctuation)"
                    ));
                }
                if reserved.contains(w.as_str()) {
                    return fail(format!("theme word {w:?} collides with an element tag"));
                }
                if !seen.insert(w.as_str()) {
                    return fail(format!("theme word {w:?} appears in more than one pool"));
                }
            }
            if theme.templates.is_empty() {
                return fail(format!("theme {:?} has no templates", theme.name));
            }
            for t in &theme.templates {
                match t.op {
                    OpKind::Click => {
                        if t.arg.is_some() || t.text.contains("{arg}") {
                            return fail(format!("CLICK template {:?} must not take an argument", t.text));
                        }
                    }
                    OpKind::Type | OpKind::Select => {
                        if t.arg.is_none() || !t.text.contains("{arg}") {
                            return fail(format!(
                                "{} template {:?} needs an arg pattern and an {{arg}} slot",
                                t.op, t.text
                            ));
                        }
                    }
                }
                // The fully expanded instruction must mention two pool words
                // so the target's labels and the instruction always overlap.
                let effective = t.text.replace("{arg}", t.arg.as_deref().unwrap_or(""));
                if !effective.contains("{w0}") || !effective.contains("{w1}") {
                    return fail(format!(
                        "template {:?} must mention {{w0}} and {{w1}}",
                        t.text
                    ));
                }
            }
        }
        // Glue words (template text minus placeholders) must not collide
        // with any pool, or distractor labels could share instruction tokens.
        for theme in &self.themes {
            for t in &theme.templates {
                let mut glue_src = t.text.clone();
                if let Some(a) = &t.arg {
                    glue_src.push(' ');
                    glue_src.push_str(a);
                }
                for ph in ["{w0}", "{w1}", "{w2}", "{arg}"] {
                    glue_src = glue_src.replace(ph, " ");
                }
                for tok in tokenize_str(&glue_src) {
                    if seen.contains(tok.as_str()) {
                        return fail(format!(
                            "template glue word {tok:?} collides with a theme pool word"
                        ));
                    }
                    if reserved.contains(tok.as_str()) {
                        return fail(format!(
                            "template glue word {tok:?} collides with an element tag"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One generated page before it is wrapped into a task.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPage {
    pub document: HtmlDocument,
    pub image: Image,
    pub instruction: String,
    /// Target theme name (the task's domain).
    pub theme: String,
    pub gt_action: Action,
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Target,
    Distractor(usize),
    Plain,
}

struct PlacedGroup {
    role: Role,
    tag: &'static str,
    /// (word, rect) per label.
    labels: Vec<(String, BBox)>,
    widget: BBox,
}

fn rects_clear(a: &BBox, b: &BBox, gap: f64) -> bool {
    a.x + a.w + gap <= b.x || b.x + b.w + gap <= a.x || a.y + a.h + gap <= b.y
        || b.y + b.h + gap <= a.y
}

fn fill(pattern: &str, words: &[String]) -> String {
    pattern
        .replace("{w0}", &words[0])
        .replace("{w1}", &words[1])
        .replace("{w2}", &words[2])
}

/// Relative label center offsets: east, west, north, south of the widget.
fn label_offset(direction: usize, rng: &mut ChaCha8Rng) -> (i64, i64) {
    match direction {
        0 => (rng.gen_range(46..=56), rng.gen_range(-4..=4)),
        1 => (-rng.gen_range(46..=56), rng.gen_range(-4..=4)),
        2 => (rng.gen_range(-8..=8), -rng.gen_range(18..=26)),
        _ => (rng.gen_range(-8..=8), rng.gen_range(18..=26)),
    }
}

fn sample_words(pool: &[String], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    idx.into_iter().take(n).map(|i| pool[i].clone()).collect()
}

/// Result of scanning one page for the planted-context property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedScan {
    /// Ground truth has ≥ 1 m-nearest neighbor sharing an instruction token.
    pub gt_ok: bool,
    /// Visible actionable non-ground-truth elements.
    pub distractors: usize,
    /// Distractors with zero instruction-token-sharing m-nearest neighbors.
    pub clean: usize,
}

impl PlantedScan {
    /// The generator's acceptance bar: the ground truth is always planted,
    /// and at most `1 + distractors/5` actionables pick up leaked context
    /// (an unlabeled widget placed next to the target inherits its labels
    /// as nearest neighbors; pages where that happens too often re-roll).
    pub fn holds(&self) -> bool {
        self.gt_ok && self.distractors - self.clean <= 1 + self.distractors / 5
    }
}

/// Direct scan of the planted-context property over a page.
pub fn planted_scan(
    doc: &HtmlDocument,
    instruction: &str,
    gt_id: &str,
    m: usize,
) -> Result<PlantedScan> {
    let instr: HashSet<String> = tokenize_str(instruction).into_iter().collect();
    let shares = |id: &str| -> Result<bool> {
        let e = doc.require(id)?;
        Ok(tokenize_str(&element_html_text(e)).iter().any(|t| instr.contains(t)))
    };
    let any_sharing_neighbor = |id: &str| -> Result<bool> {
        for (nid, _) in &visual_neighbors(doc, id, m)?.neighbors {
            if shares(nid)? {
                return Ok(true);
            }
        }
        Ok(false)
    };
    let gt_ok = any_sharing_neighbor(gt_id)?;
    let mut distractors = 0;
    let mut clean = 0;
    for e in doc.elements() {
        if e.id == gt_id || !e.visible || !e.actionable {
            continue;
        }
        distractors += 1;
        if !any_sharing_neighbor(&e.id)? {
            clean += 1;
        }
    }
    Ok(PlantedScan { gt_ok, distractors, clean })
}

struct PageDraft {
    groups: Vec<PlacedGroup>,
    gt_group: usize,
    target_theme: usize,
    instruction: String,
    operation: Operation,
}

/// One full layout attempt. `Ok(None)` means the groups did not fit.
fn try_page(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    allowed_themes: &[usize],
) -> Result<Option<PageDraft>> {
    let target_theme = allowed_themes[rng.gen_range(0..allowed_themes.len())];
    let theme = &cfg.themes[target_theme];
    let n_words = 3.max(cfg.m_planted);
    let words = sample_words(&theme.words, n_words, rng);
    let template = &theme.templates[rng.gen_range(0..theme.templates.len())];
    let arg = template.arg.as_ref().map(|a| fill(a, &words));
    let mut instruction = fill(&template.text, &words);
    if let Some(a) = &arg {
        instruction = instruction.replace("{arg}", a);
    }
    let operation = Operation::new(template.op, arg)?;

    let mut roles = Vec::with_capacity(cfg.widgets_per_page);
    roles.push(Role::Target);
    for _ in 0..cfg.distractor_groups {
        // A non-target theme; validation guarantees one exists.
        let mut t = rng.gen_range(0..cfg.themes.len() - 1);
        if t >= target_theme {
            t += 1;
        }
        roles.push(Role::Distractor(t));
    }
    roles.resize(cfg.widgets_per_page, Role::Plain);
    roles.shuffle(rng);

    let (margin_x, margin_y) = (GROUP_EXTENT_X + 4, GROUP_EXTENT_Y + 4);
    let (w, h) = (cfg.page_width as i64, cfg.page_height as i64);
    if w - margin_x <= margin_x || h - margin_y <= margin_y {
        return Err(Error::Layout {
            attempts: 0,
            reason: format!(
                "page {}x{} is too small for a widget group",
                cfg.page_width, cfg.page_height
            ),
        });
    }

    let mut placed: Vec<PlacedGroup> = Vec::with_capacity(roles.len());
    let mut gt_group = 0usize;
    for (gi, role) in roles.iter().enumerate() {
        let tag = TAGS[rng.gen_range(0..TAGS.len())];
        let label_words: Vec<String> = match role {
            Role::Target => {
                gt_group = gi;
                let n = rng.gen_range(1..=cfg.m_planted);
                words.iter().take(n).cloned().collect()
            }
            Role::Distractor(t) => {
                let n = rng.gen_range(1..=cfg.m_planted);
                sample_words(&cfg.themes[*t].words, n, rng)
            }
            Role::Plain => Vec::new(),
        };
        let mut directions = [0usize, 1, 2, 3];
        directions.shuffle(rng);
        let offsets: Vec<(i64, i64)> =
            (0..label_words.len()).map(|i| label_offset(directions[i], rng)).collect();

        let mut ok = false;
        for _ in 0..GROUP_PLACE_ATTEMPTS {
            let cx = rng.gen_range(margin_x..=w - margin_x);
            let cy = rng.gen_range(margin_y..=h - margin_y);
            let widget = BBox::new(
                (cx - WIDGET_W / 2) as f64,
                (cy - WIDGET_H / 2) as f64,
                WIDGET_W as f64,
                WIDGET_H as f64,
            )?;
            let labels: Vec<(String, BBox)> = label_words
                .iter()
                .zip(&offsets)
                .map(|(word, (dx, dy))| {
                    BBox::new(
                        (cx + dx - LABEL_W / 2) as f64,
                        (cy + dy - LABEL_H / 2) as f64,
                        LABEL_W as f64,
                        LABEL_H as f64,
                    )
                    .map(|b| (word.clone(), b))
                })
                .collect::<Result<_>>()?;
            let mine: Vec<&BBox> =
                std::iter::once(&widget).chain(labels.iter().map(|(_, b)| b)).collect();
            let clear = placed.iter().all(|g| {
                std::iter::once(&g.widget)
                    .chain(g.labels.iter().map(|(_, b)| b))
                    .all(|other| mine.iter().all(|m| rects_clear(m, other, GROUP_GAP as f64)))
            });
            if clear {
                placed.push(PlacedGroup { role: *role, tag, labels, widget });
                ok = true;
                break;
            }
        }
        if !ok {
            return Ok(None); // not enough room this attempt
        }
    }
    Ok(Some(PageDraft { groups: placed, gt_group, target_theme, instruction, operation }))
}

fn blank_page(cfg: &SynthConfig) -> Result<Image> {
    let (w, h) = (cfg.page_width, cfg.page_height);
    let mut pixels = Vec::with_capacity(w * h * 3);
    for _ in 0..w * h {
        pixels.extend_from_slice(&[BACKGROUND.0, BACKGROUND.1, BACKGROUND.2]);
    }
    Image::new(w, h, pixels)
}

/// Deterministically generates one page: layout, labels, screenshot, and the
/// ground-truth action. Retries layout (and re-rolls content) under derived
/// seeds until the page both fits and passes the planted-context scan.
pub fn generate_page(
    cfg: &SynthConfig,
    page_seed: u64,
    allowed_themes: &[usize],
    screenshot: Option<String>,
) -> Result<SynthPage> {
    assert!(!allowed_themes.is_empty(), "caller provides at least one theme");
    let seed_str = page_seed.to_string();
    let mut reason = String::from("layout never fit");
    for attempt in 0..PAGE_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[
            "synth-page",
            &seed_str,
            &attempt.to_string(),
        ]));
        let Some(PageDraft { groups, gt_group, target_theme, instruction, operation }) =
            try_page(cfg, &mut rng, allowed_themes)?
        else {
            reason = format!(
                "could not place {} groups on a {}x{} page",
                cfg.widgets_per_page, cfg.page_width, cfg.page_height
            );
            continue;
        };

        // Materialize elements in group order.
        let mut elements = Vec::new();
        let mut colors = Vec::new();
        let mut gt_id = String::new();
        for (gi, g) in groups.iter().enumerate() {
            let id = format!("e{}", elements.len());
            if gi == gt_group {
                gt_id = id.clone();
            }
            elements.push(Element {
                id,
                tag: g.tag.to_string(),
                text: String::new(),
                attrs: indexmap::IndexMap::new(),
                bbox: g.widget,
                visible: true,
                actionable: true,
                parent: None,
            });
            colors.push(WIDGET_COLOR);
            let theme_idx = match g.role {
                Role::Target => Some(target_theme),
                Role::Distractor(t) => Some(t),
                Role::Plain => None,
            };
            for (word, bbox) in &g.labels {
                elements.push(Element {
                    id: format!("e{}", elements.len()),
                    tag: LABEL_TAG.to_string(),
                    text: word.clone(),
                    attrs: indexmap::IndexMap::new(),
                    bbox: *bbox,
                    visible: true,
                    actionable: false,
                    parent: None,
                });
                colors.push(theme_idx.map(|t| THEME_PALETTE[t]).unwrap_or(WIDGET_COLOR));
            }
        }
        let document = HtmlDocument::new(elements, screenshot.clone())?;

        let scan = planted_scan(&document, &instruction, &gt_id, cfg.m_planted)?;
        if !scan.holds() {
            reason = format!(
                "planted-context scan failed (gt_ok={}, clean={}/{})",
                scan.gt_ok, scan.clean, scan.distractors
            );
            continue;
        }

        let mut image = blank_page(cfg)?;
        paint_elements(&mut image, &document, &colors);
        return Ok(SynthPage {
            document,
            image,
            instruction,
            theme: cfg.themes[target_theme].name.clone(),
            gt_action: Action { element_id: gt_id, operation },
        });
    }
    Err(Error::Layout { attempts: PAGE_ATTEMPTS, reason })
}

fn paint_elements(image: &mut Image, doc: &HtmlDocument, colors: &[(u8, u8, u8)]) {
    let w = image.width;
    for (e, color) in doc.elements().iter().zip(colors) {
        let (x0, y0) = (e.bbox.x as usize, e.bbox.y as usize);
        for y in y0..y0 + e.bbox.h as usize {
            for x in x0..x0 + e.bbox.w as usize {
                let i = (y * w + x) * 3;
                image.pixels[i] = color.0;
                image.pixels[i + 1] = color.1;
                image.pixels[i + 2] = color.2;
            }
        }
    }
}

/// Manifest written next to the generated files: the full config plus the
/// seed and placement of every page, enough to regenerate byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub version: u32,
    pub config: SynthConfig,
    pub pages: Vec<PageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageEntry {
    pub index: usize,
    pub seed: u64,
    pub split: String,
    pub theme: String,
    pub task_id: String,
    pub screenshot: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub manifest: SynthManifest,
    pub train: Vec<Task>,
    pub test: Vec<Task>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<SynthManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { line: e.line(), message: e.to_string() })
}

/// Generates the full corpus under `out`: `train.jsonl`, `test.jsonl`, one
/// PPM screenshot per page, and `manifest.json`. Pages split 80/20; under
/// [`SplitMode::CrossDomain`] the two splits also draw their target themes
/// from disjoint pools.
pub fn generate_corpus(cfg: &SynthConfig, out: &Path) -> Result<SynthCorpus> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let seed_str = cfg.seed.to_string();

    let mut order: Vec<usize> = (0..cfg.pages).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(&["synth-split", &seed_str])));
    let test_pages: HashSet<usize> = order.into_iter().take(cfg.pages / 5).collect();

    let all_themes: Vec<usize> = (0..cfg.themes.len()).collect();
    let (train_themes, test_themes) = match cfg.split {
        SplitMode::CrossTask => (all_themes.clone(), all_themes.clone()),
        SplitMode::CrossDomain => {
            let mut shuffled = all_themes.clone();
            shuffled
                .shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(&["synth-themes", &seed_str])));
            let n_test = 1.max(shuffled.len() / 5);
            let test: Vec<usize> = shuffled[..n_test].to_vec();
            let train: Vec<usize> = shuffled[n_test..].to_vec();
            (train, test)
        }
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut entries = Vec::with_capacity(cfg.pages);
    for i in 0..cfg.pages {
        let is_test = test_pages.contains(&i);
        let allowed = if is_test { &test_themes } else { &train_themes };
        let page_seed = seed::derive(&["synth-page-seed", &seed_str, &i.to_string()]);
        let screenshot = format!("page_{i:04}.ppm");
        let page = generate_page(cfg, page_seed, allowed, Some(screenshot.clone()))?;
        save_image(&page.image, out.join(&screenshot))?;
        let task_id = format!("synth-{i:04}");
        let task = Task {
            task_id: task_id.clone(),
            instruction: page.instruction.clone(),
            website: "synthetic".into(),
            domain: page.theme.clone(),
            steps: vec![Step {
                step_id: 0,
                document: page.document,
                gt_action: page.gt_action,
                history: vec![],
                history_text: vec![],
            }],
        };
        entries.push(PageEntry {
            index: i,
            seed: page_seed,
            split: (if is_test { "test" } else { "train" }).into(),
            theme: page.theme,
            task_id,
            screenshot,
        });
        if is_test {
            test.push(task);
        } else {
            train.push(task);
        }
    }

    write_corpus(&train, out.join("train.jsonl"))?;
    write_corpus(&test, out.join("test.jsonl"))?;
    let manifest = SynthManifest { version: 1, config: cfg.clone(), pages: entries };
    let mut manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    let manifest_path = out.join("manifest.json");
    std::fs::write(&manifest_path, manifest_json)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(SynthCorpus { manifest, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            pages: 6,
            page_width: 480,
            page_height: 360,
            widgets_per_page: 4,
            distractor_groups: 2,
            m_planted: 3,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn bundled_themes_validate() {
        let cfg = SynthConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.themes.len(), 8);
        for theme in &cfg.themes {
            assert_eq!(theme.templates.len(), 3);
        }
    }

    #[test]
    fn config_rejections_name_the_field() {
        let bad = |f: fn(&mut SynthConfig)| {
            let mut c = tiny_cfg();
            f(&mut c);
            c.validate().unwrap_err().to_string()
        };
        assert!(bad(|c| c.pages = 0).contains("pages"));
        assert!(bad(|c| c.page_width = 32).contains("64"));
        assert!(bad(|c| c.widgets_per_page = 3).contains("distractor_groups"));
        assert!(bad(|c| c.m_planted = 0).contains("m_planted"));
        assert!(bad(|c| c.themes[1].words[0] = c.themes[0].words[0].clone())
            .contains("more than one pool"));
        assert!(bad(|c| c.themes[0].templates[0].text = "tap {w0}".into()).contains("{w1}"));
        assert!(bad(|c| c.themes[0].templates[1].arg = None).contains("arg"));
        assert!(bad(|c| c.themes[0].templates[0].text = "click the {w0} {w1} sedan".into())
            .contains("glue"));
        assert!(bad(|c| c.themes[0].templates[0].text = "click the {w0} {w1} button".into())
            .contains("tag"));
    }

    #[test]
    fn single_group_page_forces_gt() {
        let cfg = SynthConfig {
            widgets_per_page: 1,
            distractor_groups: 0,
            page_width: 300,
            page_height: 200,
            ..tiny_cfg()
        };
        let page = generate_page(&cfg, 5, &[0], None).unwrap();
        let actionables: Vec<_> =
            page.document.elements().iter().filter(|e| e.actionable).collect();
        assert_eq!(actionables.len(), 1);
        assert_eq!(actionables[0].id, page.gt_action.element_id);
        let scan =
            planted_scan(&page.document, &page.instruction, &page.gt_action.element_id, 3)
                .unwrap();
        assert!(scan.gt_ok);
        assert_eq!(scan.distractors, 0);
    }

    #[test]
    fn page_generation_is_deterministic() {
        let cfg = tiny_cfg();
        let allowed: Vec<usize> = (0..cfg.themes.len()).collect();
        let a = generate_page(&cfg, 42, &allowed, Some("s.ppm".into())).unwrap();
        let b = generate_page(&cfg, 42, &allowed, Some("s.ppm".into())).unwrap();
        assert_eq!(a, b);
        let c = generate_page(&cfg, 43, &allowed, Some("s.ppm".into())).unwrap();
        assert_ne!(a.document, c.document);
    }

    #[test]
    fn pages_stay_in_bounds_without_overlap_and_with_contrast() {
        let cfg = tiny_cfg();
        let allowed: Vec<usize> = (0..cfg.themes.len()).collect();
        for seed in 0..8u64 {
            let page = generate_page(&cfg, seed, &allowed, None).unwrap();
            let els = page.document.elements();
            let bg = (BACKGROUND.0 as f64 + BACKGROUND.1 as f64 + BACKGROUND.2 as f64) / 3.0;
            for e in els {
                let b = &e.bbox;
                assert!(b.x >= 0.0 && b.y >= 0.0);
                assert!(b.x + b.w <= cfg.page_width as f64);
                assert!(b.y + b.h <= cfg.page_height as f64);
                // Mean color over the rectangle differs from background.
                let (mut sum, mut n) = (0.0, 0);
                for y in b.y as usize..(b.y + b.h) as usize {
                    for x in b.x as usize..(b.x + b.w) as usize {
                        let (r, g, bl) = page.image.rgb(x, y);
                        sum += (r as f64 + g as f64 + bl as f64) / 3.0;
                        n += 1;
                    }
                }
                assert!(
                    (sum / n as f64 - bg).abs() >= 32.0,
                    "element {} mean color too close to background",
                    e.id
                );
            }
            for (i, a) in els.iter().enumerate() {
                for b in &els[i + 1..] {
                    assert!(
                        rects_clear(&a.bbox, &b.bbox, 0.0),
                        "elements {} and {} overlap",
                        a.id,
                        b.id
                    );
                }
            }
        }
    }

    #[test]
    fn planted_property_holds_on_every_page() {
        let cfg = tiny_cfg();
        let allowed: Vec<usize> = (0..cfg.themes.len()).collect();
        for seed in 100..112u64 {
            let page = generate_page(&cfg, seed, &allowed, None).unwrap();
            let scan = planted_scan(
                &page.document,
                &page.instruction,
                &page.gt_action.element_id,
                cfg.m_planted,
            )
            .unwrap();
            assert!(scan.holds(), "seed {seed}: {scan:?}");
            assert!(scan.gt_ok);
        }
    }

    #[test]
    fn arguments_are_instruction_substrings() {
        let cfg = tiny_cfg();
        let allowed: Vec<usize> = (0..cfg.themes.len()).collect();
        let mut seen_arg = false;
        for seed in 0..20u64 {
            let page = generate_page(&cfg, seed, &allowed, None).unwrap();
            if let Some(arg) = &page.gt_action.operation.arg {
                seen_arg = true;
                assert!(
                    page.instruction.contains(arg.as_str()),
                    "arg {:?} not in instruction {:?}",
                    arg,
                    page.instruction
                );
            }
        }
        assert!(seen_arg, "no TYPE/SELECT page in 20 seeds");
    }

    #[test]
    fn layout_failure_is_reported_after_bounded_attempts() {
        let cfg = SynthConfig {
            page_width: 170,
            page_height: 80,
            widgets_per_page: 6,
            distractor_groups: 2,
            ..tiny_cfg()
        };
        match generate_page(&cfg, 1, &[0, 1], None) {
            Err(Error::Layout { attempts, .. }) => assert_eq!(attempts, PAGE_ATTEMPTS),
            other => panic!("expected layout error, got {other:?}"),
        }
    }

    #[test]
    fn corpus_splits_80_20_and_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { pages: 10, ..tiny_cfg() };
        let corpus = generate_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(corpus.train.len(), 8);
        assert_eq!(corpus.test.len(), 2);
        assert_eq!(corpus.manifest.pages.len(), 10);
        for name in ["train.jsonl", "test.jsonl", "manifest.json"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        for entry in &corpus.manifest.pages {
            assert!(dir.path().join(&entry.screenshot).exists());
        }
        // Round trip through the wire format.
        let back = crate::document::parse_corpus(dir.path().join("train.jsonl")).unwrap();
        assert_eq!(back, corpus.train);
        // Position-independent split bookkeeping.
        let by_split: HashMap<&str, usize> =
            corpus.manifest.pages.iter().fold(HashMap::new(), |mut m, e| {
                *m.entry(e.split.as_str()).or_insert(0) += 1;
                m
            });
        assert_eq!(by_split[&"train"], 8);
        assert_eq!(by_split[&"test"], 2);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let cfg = SynthConfig { pages: 5, ..tiny_cfg() };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_corpus(&cfg, d1.path()).unwrap();
        // Regenerate from the manifest's embedded config.
        let manifest = load_manifest(d1.path().join("manifest.json")).unwrap();
        assert_eq!(manifest.version, 1);
        generate_corpus(&manifest.config, d2.path()).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.len() >= 8);
        for name in names {
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn crossdomain_split_uses_disjoint_theme_pools() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { pages: 10, split: SplitMode::CrossDomain, ..tiny_cfg() };
        let corpus = generate_corpus(&cfg, dir.path()).unwrap();
        let train_domains: HashSet<&str> =
            corpus.train.iter().map(|t| t.domain.as_str()).collect();
        let test_domains: HashSet<&str> =
            corpus.test.iter().map(|t| t.domain.as_str()).collect();
        assert!(!train_domains.is_empty() && !test_domains.is_empty());
        assert!(
            train_domains.is_disjoint(&test_domains),
            "train {train_domains:?} vs test {test_domains:?}"
        );
        // Instructions never mention the other split's pool words.
        let test_words: HashSet<&str> = cfg
            .themes
            .iter()
            .filter(|t| test_domains.contains(t.name.as_str()))
            .flat_map(|t| t.words.iter().map(|w| w.as_str()))
            .collect();
        for task in &corpus.train {
            for tok in tokenize_str(&task.instruction) {
                assert!(!test_words.contains(tok.as_str()), "{tok} leaks into train");
            }
        }
    }

    #[test]
    fn split_mode_parses() {
        assert_eq!("crosstask".parse::<SplitMode>().unwrap(), SplitMode::CrossTask);
        assert_eq!("crossdomain".parse::<SplitMode>().unwrap(), SplitMode::CrossDomain);
        assert!("random".parse::<SplitMode>().is_err());
    }
}
