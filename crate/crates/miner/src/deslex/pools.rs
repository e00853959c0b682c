//! Synthetic surface generators for names and locations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceClass {
    Person,
    Location,
}

/// Source of replacement surfaces.
pub trait SurfaceGenerator {
    fn generate(&self, class: SurfaceClass, language: Language, rng: &mut ChaCha8Rng) -> String;

    /// Every surface the generator can produce, if that set is finite and
    /// small enough to enumerate.
    fn pool(&self, class: SurfaceClass, language: Language) -> Option<Vec<String>>;
}

const PT_FIRST: &[&str] = &[
    "Ana", "Beatriz", "Carla", "Diana", "Eduarda", "Filipa", "Graça", "Helena", "Inês", "Joana",
    "Leonor", "Marta", "Natália", "Olívia", "Patrícia", "Rita", "Sofia", "Teresa", "Vera", "Alberto",
    "Bruno", "Carlos", "Duarte", "Eduardo", "Fernando", "Gonçalo", "Henrique", "Joaquim", "Luís",
    "Manuel", "Nuno", "Óscar", "Paulo", "Rui", "Sérgio", "Tiago", "Vasco", "Xavier",
];
const PT_LAST: &[&str] = &[
    "Almeida", "Barros", "Cardoso", "Domingues", "Esteves", "Figueiredo", "Gaspar", "Henriques",
    "Lourenço", "Machado", "Nogueira", "Oliveira", "Pacheco", "Quintela", "Ramalho", "Saraiva",
    "Tavares", "Valente", "Vieira", "Moura", "Brito", "Coelho", "Fontes", "Leitão", "Matias",
];
const EN_FIRST: &[&str] = &[
    "Alice", "Bethany", "Chloe", "Deborah", "Eleanor", "Fiona", "Grace", "Hannah", "Isla", "Julia",
    "Adam", "Benjamin", "Colin", "Daniel", "Edward", "Frank", "George", "Henry", "Ian", "James",
];
const EN_LAST: &[&str] = &[
    "Ashworth", "Barker", "Clayton", "Dawson", "Ellison", "Fletcher", "Gardner", "Harding",
    "Irving", "Jennings", "Kendall", "Lambert", "Marsh", "Norris", "Porter", "Rowley",
];
const PT_VENUE: &[&str] = &[
    "Salão Nobre", "Sala de Reuniões", "Auditório", "Sala de Sessões", "Biblioteca",
    "Centro Cultural", "Casa da Cultura", "Edifício dos Paços",
];
const PT_PLACE: &[&str] = &[
    "de Vale Formoso", "de Santa Luzia", "do Outeiro", "da Ribeira Seca", "de Monte Alto",
    "de São Bento", "da Quinta Nova", "de Pedras Brancas",
];
const EN_VENUE: &[&str] = &["Council Chamber", "Committee Room", "Civic Hall", "Assembly Room", "Town Hall"];
const EN_PLACE: &[&str] = &["at Westbury", "at Oakfield", "at Millbrook", "at Harlow Green", "at Stonebridge"];

const PT_NAMES_SMALL: &[&str] = &[
    "Ana Ramalho", "Bruno Esteves", "Carla Nogueira", "Duarte Pacheco", "Inês Valente",
    "Joaquim Saraiva", "Marta Figueiredo", "Nuno Tavares", "Rita Quintela", "Vasco Brito",
];
const EN_NAMES_SMALL: &[&str] = &[
    "Alice Porter", "Colin Marsh", "Grace Lambert", "Henry Dawson", "Julia Norris", "Frank Barker",
];
const PT_LOCS_SMALL: &[&str] = &[
    "Salão Nobre de Vale Formoso", "Auditório do Outeiro", "Biblioteca de Santa Luzia",
    "Sala de Sessões de Monte Alto",
];
const EN_LOCS_SMALL: &[&str] = &["Civic Hall at Oakfield", "Council Chamber at Westbury", "Town Hall at Millbrook"];

/// A fixed, finite list per class and language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordListGenerator {
    pub pt_names: Vec<String>,
    pub en_names: Vec<String>,
    pub pt_locations: Vec<String>,
    pub en_locations: Vec<String>,
}

fn owned(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for WordListGenerator {
    fn default() -> Self {
        WordListGenerator {
            pt_names: owned(PT_NAMES_SMALL),
            en_names: owned(EN_NAMES_SMALL),
            pt_locations: owned(PT_LOCS_SMALL),
            en_locations: owned(EN_LOCS_SMALL),
        }
    }
}

impl WordListGenerator {
    fn list(&self, class: SurfaceClass, language: Language) -> &[String] {
        match (class, language) {
            (SurfaceClass::Person, Language::Pt) => &self.pt_names,
            (SurfaceClass::Person, Language::En) => &self.en_names,
            (SurfaceClass::Location, Language::Pt) => &self.pt_locations,
            (SurfaceClass::Location, Language::En) => &self.en_locations,
        }
    }
}

impl SurfaceGenerator for WordListGenerator {
    fn generate(&self, class: SurfaceClass, language: Language, rng: &mut ChaCha8Rng) -> String {
        let list = self.list(class, language);
        list[rng.gen_range(0..list.len())].clone()
    }

    fn pool(&self, class: SurfaceClass, language: Language) -> Option<Vec<String>> {
        Some(self.list(class, language).to_vec())
    }
}

/// Combines locale-specific given names, surnames and venue parts. Persons
/// get one or two surnames, so the space is large but still enumerable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocaleGenerator;

fn pick<'a>(list: &[&'a str], rng: &mut ChaCha8Rng) -> &'a str {
    list[rng.gen_range(0..list.len())]
}

impl SurfaceGenerator for LocaleGenerator {
    fn generate(&self, class: SurfaceClass, language: Language, rng: &mut ChaCha8Rng) -> String {
        let (first, last, venue, place) = match language {
            Language::Pt => (PT_FIRST, PT_LAST, PT_VENUE, PT_PLACE),
            Language::En => (EN_FIRST, EN_LAST, EN_VENUE, EN_PLACE),
        };
        match class {
            SurfaceClass::Person => {
                let mut s = format!("{} {}", pick(first, rng), pick(last, rng));
                if language == Language::Pt && rng.gen_bool(0.5) {
                    let second = pick(last, rng);
                    if !s.ends_with(second) {
                        s = format!("{} {second}", s);
                    }
                }
                s
            }
            SurfaceClass::Location => format!("{} {}", pick(venue, rng), pick(place, rng)),
        }
    }

    fn pool(&self, _class: SurfaceClass, _language: Language) -> Option<Vec<String>> {
        None
    }
}

/// Serializable choice of generator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    WordList,
    #[default]
    Locale,
}

impl GeneratorKind {
    pub fn build(&self) -> Box<dyn SurfaceGenerator> {
        match self {
            GeneratorKind::WordList => Box::new(WordListGenerator::default()),
            GeneratorKind::Locale => Box::new(LocaleGenerator),
        }
    }
}
