//! Templated synthetic minutes with exact gold annotations, for smoke
//! tests and offline demos. Each fake municipality has its own opening and
//! closing phrasing; bodies are long runs of deliberation boilerplate with
//! distractor dates and names.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    AnnotatedDocument, Corpus, EntityAnnotation, MetadataCategory, MetadataKind, MinuteDocument, Presence,
    SegmentAnnotation, SegmentType,
};
use crate::error::{MinerError, Result};
use crate::text::{Language, Span};

pub const MUNICIPALITIES: [&str; 6] = ["Sobralinho", "Montalvo", "Ribeira Alta", "Serrazes", "Fontelas", "Vale de Arrifes"];

const FIRST: &[&str] = &[
    "António", "Maria", "José", "Francisca", "Manuel", "Isabel", "Jorge", "Luísa", "Ricardo", "Cristina",
    "Pedro", "Fátima", "Miguel", "Susana", "Hugo", "Clara", "Armando", "Lurdes", "Tomás", "Elisa",
    "Vítor", "Rosa", "Daniel", "Paula", "Artur", "Sandra", "Fábio", "Mónica", "Rogério", "Cátia",
];
const LAST: &[&str] = &[
    "Ferreira", "Rodrigues", "Martins", "Sousa", "Gomes", "Lopes", "Marques", "Ribeiro", "Pinto", "Carvalho",
    "Teixeira", "Correia", "Mendes", "Nunes", "Soares", "Rocha", "Antunes", "Pires", "Simões", "Fonseca",
    "Morais", "Cunha", "Guerreiro", "Amaral", "Castro", "Baptista", "Lima", "Faria", "Neves", "Reis",
];
const MONTHS: [&str; 12] = [
    "janeiro", "fevereiro", "março", "abril", "maio", "junho", "julho", "agosto", "setembro", "outubro",
    "novembro", "dezembro",
];
const VENUES: &[&str] = &[
    "Salão Nobre dos Paços do Concelho",
    "Sala de Reuniões da Câmara Municipal",
    "Auditório Municipal",
    "Edifício dos Paços do Município",
    "Sala das Sessões",
];
const BODY: &[&str] = &[
    "Foi presente a informação dos serviços relativa ao processo {num}, que mereceu aprovação por unanimidade.",
    "A Câmara deliberou aprovar a minuta do contrato de empreitada no valor de {amount} euros.",
    "Foi apreciado o ofício datado de {date}, remetido pela junta de freguesia, tendo sido tomado conhecimento.",
    "O vereador {name} questionou o ponto de situação das obras de requalificação da escola básica.",
    "Em resposta, o presidente esclareceu que a conclusão dos trabalhos está prevista para {month}.",
    "Foi deliberado atribuir um apoio financeiro de {amount} euros à associação cultural local.",
    "A proposta de alteração ao regulamento municipal foi submetida a consulta pública por trinta dias.",
    "Foi ratificado o despacho de {date} que autorizou a cedência do pavilhão desportivo.",
    "Tomou-se conhecimento do resumo diário de tesouraria, que apresentava um saldo de {amount} euros.",
    "A vereadora {name} apresentou uma recomendação sobre a limpeza das bermas das estradas municipais.",
    "Deliberou-se, por maioria, aprovar a revisão orçamental número {num}.",
    "Foi presente o pedido de licenciamento de operação urbanística apresentado por {name}.",
    "A Câmara tomou conhecimento das alterações ao trânsito na avenida principal a partir de {date}.",
    "Procedeu-se à análise do relatório de atividades do gabinete técnico florestal.",
    "Foi aprovada a abertura de procedimento concursal para {num} postos de trabalho.",
    "O presidente informou que a reunião com a entidade regional decorreu às {time} do dia anterior.",
    "Foi aprovado o protocolo de colaboração com o agrupamento de escolas do concelho de {muni}.",
    "A vereadora {name} absteve-se na votação do ponto relativo às taxas de ocupação do espaço público.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub municipalities: usize,
    pub docs_per_municipality: usize,
    /// Body sentences per minute.
    pub body_sentences: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            municipalities: 6,
            docs_per_municipality: 5,
            body_sentences: 120,
            seed: 2024,
        }
    }
}

struct Builder {
    text: String,
    entities: Vec<EntityAnnotation>,
}

impl Builder {
    fn lit(&mut self, s: &str) -> &mut Self {
        self.text.push_str(s);
        self
    }

    fn ent(&mut self, cat: MetadataCategory, s: &str) -> &mut Self {
        let start = self.text.len();
        self.text.push_str(s);
        self.entities.push(EntityAnnotation {
            category: cat,
            span: Span::new(start, self.text.len()),
            surface: s.to_string(),
        });
        self
    }
}

fn name(rng: &mut ChaCha8Rng) -> String {
    let mut s = format!("{} {}", FIRST.choose(rng).unwrap(), LAST.choose(rng).unwrap());
    if rng.gen_bool(0.4) {
        s.push(' ');
        s.push_str(LAST.choose(rng).unwrap());
    }
    s
}

fn distinct_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let c = name(rng);
        if !out.iter().any(|o| o == &c) {
            out.push(c);
        }
    }
    out
}

fn long_date(rng: &mut ChaCha8Rng, year: i32) -> String {
    let m = rng.gen_range(0..12);
    format!("{} de {} de {year}", rng.gen_range(1..=28), MONTHS[m])
}

fn time(rng: &mut ChaCha8Rng, hours: std::ops::Range<u32>, style: usize) -> String {
    let h = rng.gen_range(hours);
    let m = [0, 15, 30, 45][rng.gen_range(0..4)];
    match style % 3 {
        0 => format!("{h}h{m:02}"),
        1 => format!("{h}:{m:02}"),
        _ if m == 0 => format!("{h} horas"),
        _ => format!("{h} horas e {m} minutos"),
    }
}

fn join_names(b: &mut Builder, names: &[String], cat: MetadataCategory) {
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            b.lit(if i + 1 == names.len() { " e " } else { ", " });
        }
        b.ent(cat, n);
    }
}

fn body_sentence(rng: &mut ChaCha8Rng, muni: &str, year: i32) -> String {
    let t = BODY.choose(rng).unwrap();
    let mut s = t.to_string();
    let fills: [(&str, String); 7] = [
        ("{num}", rng.gen_range(2..400).to_string()),
        ("{amount}", format!("{}.{:03},{:02}", rng.gen_range(1..900), rng.gen_range(0..1000), rng.gen_range(0..100))),
        ("{date}", long_date(rng, year)),
        ("{name}", name(rng)),
        ("{month}", MONTHS[rng.gen_range(0..12)].to_string()),
        ("{time}", {
            let style = rng.gen_range(0..3);
            time(rng, 9..19, style)
        }),
        ("{muni}", muni.to_string()),
    ];
    for (k, v) in fills {
        s = s.replace(k, &v);
    }
    s
}

fn one_minute(m_idx: usize, muni: &str, d_idx: usize, rng: &mut ChaCha8Rng, body_sentences: usize) -> Result<AnnotatedDocument> {
    let year = 2018 + rng.gen_range(0..6);
    let number = format!("{}", rng.gen_range(1..40));
    let extraordinary = rng.gen_bool(0.2);
    let mtype = if extraordinary { "extraordinária" } else { "ordinária" };
    let date = long_date(rng, year);
    let venue = VENUES.choose(rng).unwrap().to_string();
    let people = distinct_names(rng, 7);
    let president = &people[0];
    let n_present = rng.gen_range(2..=4);
    let present = &people[1..1 + n_present];
    let absent = &people[1 + n_present];
    let substitute = &people[2 + n_present];
    let has_absence = rng.gen_bool(0.7);
    let start = time(rng, 9..12, m_idx + d_idx);
    let end = time(rng, 12..19, m_idx + d_idx + 1);

    let plain = MetadataCategory::plain;
    let pres = MetadataCategory::plain(MetadataKind::President);
    let here = MetadataCategory::councilor(Presence::Present);
    let mut b = Builder {
        text: String::new(),
        entities: Vec::new(),
    };

    // opening, phrased per municipality
    match m_idx % 3 {
        0 => {
            b.lit("Ata ").ent(plain(MetadataKind::MeetingNumber), &format!("n.º {number}"));
            b.lit(&format!(" da reunião ")).ent(plain(MetadataKind::MeetingType), mtype);
            b.lit(&format!(" da Câmara Municipal de {muni}.\nAos ")).ent(plain(MetadataKind::Date), &date);
            b.lit(", no ").ent(plain(MetadataKind::Location), &venue);
            b.lit(", reuniu a Câmara Municipal sob a presidência de ").ent(pres, president);
            b.lit(", estando presentes os vereadores ");
            join_names(&mut b, present, here);
            b.lit(".\n");
        }
        1 => {
            b.lit("Reunião ").ent(plain(MetadataKind::MeetingType), mtype);
            b.lit(" ").ent(plain(MetadataKind::MeetingNumber), &format!("{number}/{year}"));
            b.lit(&format!(" da Câmara Municipal de {muni}.\nNo dia ")).ent(plain(MetadataKind::Date), &date);
            b.lit(" realizou-se no ").ent(plain(MetadataKind::Location), &venue);
            b.lit(" a reunião do executivo, presidida por ").ent(pres, president);
            b.lit(", Presidente da Câmara, com a presença dos vereadores ");
            join_names(&mut b, present, here);
            b.lit(".\n");
        }
        _ => {
            b.lit(&format!("MUNICÍPIO DE {}\n", muni.to_uppercase()));
            b.lit("Ata da reunião ").ent(plain(MetadataKind::MeetingType), mtype);
            b.lit(" número ").ent(plain(MetadataKind::MeetingNumber), &number);
            b.lit(", realizada em ").ent(plain(MetadataKind::Date), &date);
            b.lit(".\nEstiveram presentes, no ").ent(plain(MetadataKind::Location), &venue);
            b.lit(", o Presidente ").ent(pres, president);
            b.lit(" e os vereadores ");
            join_names(&mut b, present, here);
            b.lit(".\n");
        }
    }
    if has_absence {
        if m_idx % 2 == 0 {
            b.lit("Faltou o vereador ").ent(MetadataCategory::councilor(Presence::Absent), absent);
            b.lit(", por motivo justificado.\n");
        } else {
            b.lit("O vereador ").ent(MetadataCategory::councilor(Presence::Substituted), absent);
            b.lit(" foi substituído por ").ent(here, substitute);
            b.lit(".\n");
        }
    }
    match m_idx % 2 {
        0 => b.lit("Pelas ").ent(plain(MetadataKind::StartTime), &start).lit(", o Presidente declarou aberta a reunião.\n"),
        _ => b.lit("A reunião teve início às ").ent(plain(MetadataKind::StartTime), &start).lit(".\n"),
    };
    let opening_end = b.text.len();

    b.lit("PERÍODO DE ANTES DA ORDEM DO DIA\n");
    for i in 0..body_sentences {
        b.lit(&body_sentence(rng, muni, year));
        b.lit(if i % 4 == 3 { "\n" } else { " " });
    }
    if !b.text.ends_with('\n') {
        b.text.pop();
        b.lit("\n");
    }

    let closing_start = b.text.len();
    match m_idx % 3 {
        0 => {
            b.lit("E nada mais havendo a tratar, o Presidente declarou encerrada a reunião às ")
                .ent(plain(MetadataKind::EndTime), &end)
                .lit(", da qual se lavrou a presente ata.\n");
        }
        1 => {
            b.lit("Não havendo mais assuntos, a reunião foi encerrada pelas ")
                .ent(plain(MetadataKind::EndTime), &end)
                .lit(".\n");
        }
        _ => {
            b.lit("Eram ")
                .ent(plain(MetadataKind::EndTime), &end)
                .lit(" quando o Presidente deu por encerrados os trabalhos.\n");
        }
    }
    b.lit("O Presidente da Câmara, ").ent(pres, president).lit(".");

    let doc = MinuteDocument::new(format!("{}-{:02}", slug(muni), d_idx + 1), muni, Language::Pt, b.text);
    let seg = |s: usize, e: usize| {
        doc.snap_to_sentences(Span::new(s, e))
            .ok_or_else(|| MinerError::Data(format!("{}: template segment not on sentences", doc.doc_id)))
    };
    let opening = seg(0, opening_end - 1)?;
    let closing = seg(closing_start, doc.text.len())?;
    let out = AnnotatedDocument {
        entities: b.entities,
        segments: vec![
            SegmentAnnotation {
                segment_type: SegmentType::Opening,
                span: Some(opening),
            },
            SegmentAnnotation {
                segment_type: SegmentType::Closing,
                span: Some(closing),
            },
        ],
        deslex: None,
        doc,
    };
    out.validate()?;
    Ok(out)
}

fn slug(s: &str) -> String {
    crate::text::fold(s).replace(' ', "-")
}

/// Documents ordered by municipality, then by index.
pub fn generate_documents(config: &SynthConfig) -> Result<Vec<AnnotatedDocument>> {
    if config.municipalities == 0 || config.municipalities > MUNICIPALITIES.len() {
        return Err(MinerError::Config(format!("municipalities must be in 1..={}", MUNICIPALITIES.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut docs = Vec::new();
    for (m, muni) in MUNICIPALITIES.iter().take(config.municipalities).enumerate() {
        for d in 0..config.docs_per_municipality {
            docs.push(one_minute(m, muni, d, &mut rng, config.body_sentences)?);
        }
    }
    Ok(docs)
}

pub fn generate_corpus(config: &SynthConfig) -> Result<Corpus> {
    Corpus::new(generate_documents(config)?)
}
