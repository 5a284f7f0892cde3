use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::LineImage;
use super::DataError;

/// One page on disk: `{page_id, writer_id, entries: [{image, text}]}`. Image paths
/// are relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageManifest {
    pub page_id: String,
    pub writer_id: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub text: String,
    /// Set on mixed pages, where lines come from several writers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writer_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageLine {
    pub image: LineImage,
    pub text: String,
    pub writer_id: String,
}

/// A page held in memory: the unit of adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub page_id: String,
    pub writer_id: String,
    pub lines: Vec<PageLine>,
}

impl Page {
    pub fn images(&self) -> Vec<LineImage> {
        self.lines.iter().map(|l| l.image.clone()).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.lines.iter().map(|l| l.text.as_str()).collect()
    }

    pub fn writers(&self) -> std::collections::BTreeSet<&str> {
        self.lines.iter().map(|l| l.writer_id.as_str()).collect()
    }
}

impl PageManifest {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.entries.is_empty() {
            return Err(DataError::BadManifest(format!("page {} has no entries", self.page_id)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let m: PageManifest = serde_json::from_str(&text)
            .map_err(|e| DataError::BadManifest(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| DataError::BadManifest(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn resolve(base: &Path, image: &str) -> PathBuf {
        let p = Path::new(image);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Loads every referenced image; `base` is the manifest's directory.
    pub fn to_page(&self, base: &Path) -> Result<Page, DataError> {
        self.validate()?;
        let lines = self
            .entries
            .iter()
            .map(|e| {
                Ok(PageLine {
                    image: LineImage::load_pgm(&Self::resolve(base, &e.image))?,
                    text: e.text.clone(),
                    writer_id: e.writer_id.clone().unwrap_or_else(|| self.writer_id.clone()),
                })
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Page {
            page_id: self.page_id.clone(),
            writer_id: self.writer_id.clone(),
            lines,
        })
    }
}

/// Writes the page's images as `<dir>/<page_id>/<nnn>.pgm` and its manifest as
/// `<dir>/<page_id>.json`. Returns the manifest path.
pub fn write_page(page: &Page, dir: &Path) -> Result<PathBuf, DataError> {
    let img_dir = dir.join(&page.page_id);
    std::fs::create_dir_all(&img_dir)?;
    let mixed = page.writers().len() > 1;
    let mut entries = Vec::with_capacity(page.lines.len());
    for (i, line) in page.lines.iter().enumerate() {
        let rel = format!("{}/{:03}.pgm", page.page_id, i);
        line.image.save_pgm(&dir.join(&rel))?;
        entries.push(ManifestEntry {
            image: rel,
            text: line.text.clone(),
            writer_id: mixed.then(|| line.writer_id.clone()),
        });
    }
    let manifest = PageManifest {
        page_id: page.page_id.clone(),
        writer_id: page.writer_id.clone(),
        entries,
    };
    let path = dir.join(format!("{}.json", page.page_id));
    manifest.save(&path)?;
    Ok(path)
}

/// Loads every `*.json` manifest directly under `dir`, sorted by file name.
pub fn load_pages(dir: &Path) -> Result<Vec<Page>, DataError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DataError::BadManifest(format!(
            "no manifests found in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| PageManifest::load(p)?.to_page(dir))
        .collect()
}
