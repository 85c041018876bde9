//! Channel attribute-based positional encoding.
//!
//! A channel is identified by what it is (scalp region, hemisphere, distance
//! from the midline, reference scheme) rather than by where it sits in a
//! montage. Each attribute has its own learned encoder; the four encodings are
//! concatenated and fused by a small MLP into the shared embedding space.
//! Bipolar derivations are embedded as the mean of their two constituents.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const EMBED_DIM: usize = 64;
pub const ATTR_DIM: usize = 16;
/// Divisor applied to the electrode number before its linear projection.
pub const NUMBER_SCALE: f64 = 8.0;

const STANDARD_NOMENCLATURE: &str = include_str!("../data/channels.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Frontopolar,
    Frontal,
    Central,
    Parietal,
    Occipital,
    Temporal,
    Auricular,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::Frontopolar,
        Region::Frontal,
        Region::Central,
        Region::Parietal,
        Region::Occipital,
        Region::Temporal,
        Region::Auricular,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Frontopolar => "frontopolar",
            Region::Frontal => "frontal",
            Region::Central => "central",
            Region::Parietal => "parietal",
            Region::Occipital => "occipital",
            Region::Temporal => "temporal",
            Region::Auricular => "auricular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hemisphere {
    Left,
    Right,
    Midline,
}

impl Hemisphere {
    pub const ALL: [Hemisphere; 3] = [Hemisphere::Left, Hemisphere::Right, Hemisphere::Midline];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Hemisphere::Left => "left",
            Hemisphere::Right => "right",
            Hemisphere::Midline => "midline",
        }
    }

    fn for_number(number: u32) -> Hemisphere {
        match number {
            0 => Hemisphere::Midline,
            n if n % 2 == 1 => Hemisphere::Left,
            _ => Hemisphere::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceType {
    Average,
    LinkedEar,
    Bipolar,
}

impl ReferenceType {
    pub const ALL: [ReferenceType; 3] = [ReferenceType::Average, ReferenceType::LinkedEar, ReferenceType::Bipolar];

    pub fn index(self) -> usize {
        self as usize
    }
}

fn parse_enum<T: Copy>(token: &str, all: &[T], name: impl Fn(T) -> &'static str) -> Option<T> {
    all.iter().copied().find(|&v| name(v) == token)
}

/// Scalp location of a single electrode, as encoded by its 10-20 label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElectrodeSite {
    pub region: Region,
    pub hemisphere: Hemisphere,
    /// 0 for midline ("Z") electrodes.
    pub number: u32,
}

impl ElectrodeSite {
    pub fn new(region: Region, hemisphere: Hemisphere, number: u32) -> Result<Self> {
        if Hemisphere::for_number(number) != hemisphere {
            return Err(Error::contract(format!(
                "electrode number {number} is inconsistent with hemisphere {}",
                hemisphere.as_str()
            )));
        }
        Ok(Self {
            region,
            hemisphere,
            number,
        })
    }

    pub fn with_reference(self, reference: ReferenceType) -> ChannelAttributes {
        ChannelAttributes {
            region: self.region,
            hemisphere: self.hemisphere,
            number: self.number,
            reference,
        }
    }
}

/// The four semantic attributes of a recorded channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelAttributes {
    pub region: Region,
    pub hemisphere: Hemisphere,
    pub number: u32,
    pub reference: ReferenceType,
}

/// Parse a 10-20 label such as `FP1`, `Cz`, `T6` or `A1`.
pub fn parse_channel_name(name: &str) -> Result<ElectrodeSite> {
    let upper = name.trim().to_ascii_uppercase();
    let fail = |reason: &str| Error::ChannelParse {
        name: name.to_string(),
        reason: reason.to_string(),
    };
    let (region, rest) = if let Some(rest) = upper.strip_prefix("FP") {
        (Region::Frontopolar, rest)
    } else {
        let mut chars = upper.chars();
        let region = match chars.next() {
            Some('F') => Region::Frontal,
            Some('C') => Region::Central,
            Some('P') => Region::Parietal,
            Some('O') => Region::Occipital,
            Some('T') => Region::Temporal,
            Some('A') => Region::Auricular,
            Some(_) => return Err(fail("unrecognized region letters")),
            None => return Err(fail("empty name")),
        };
        (region, chars.as_str())
    };
    let number = if rest == "Z" {
        0
    } else if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) && !rest.starts_with('0') {
        rest.parse::<u32>().map_err(|_| fail("electrode number out of range"))?
    } else if rest.is_empty() {
        return Err(fail("missing electrode number or Z suffix"));
    } else if rest.bytes().next().is_some_and(|b| b.is_ascii_alphabetic()) {
        return Err(fail("unrecognized region letters"));
    } else {
        return Err(fail("malformed suffix"));
    };
    Ok(ElectrodeSite {
        region,
        hemisphere: Hemisphere::for_number(number),
        number,
    })
}

/// A recorded channel: one electrode, or a bipolar derivation `minuend - subtrahend`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelId {
    Unipolar(String),
    Bipolar(String, String),
}

impl ChannelId {
    pub fn unipolar(name: &str) -> Result<Self> {
        parse_channel_name(name)?;
        Ok(ChannelId::Unipolar(name.trim().to_ascii_uppercase()))
    }

    pub fn bipolar(minuend: &str, subtrahend: &str) -> Result<Self> {
        parse_channel_name(minuend)?;
        parse_channel_name(subtrahend)?;
        let (a, b) = (
            minuend.trim().to_ascii_uppercase(),
            subtrahend.trim().to_ascii_uppercase(),
        );
        if a == b {
            return Err(Error::contract(format!(
                "bipolar derivation needs two distinct electrodes, got {a}-{b}"
            )));
        }
        Ok(ChannelId::Bipolar(a, b))
    }

    pub fn is_bipolar(&self) -> bool {
        matches!(self, ChannelId::Bipolar(..))
    }

    pub fn electrodes(&self) -> Vec<&str> {
        match self {
            ChannelId::Unipolar(a) => vec![a],
            ChannelId::Bipolar(a, b) => vec![a, b],
        }
    }

    /// Attributes of each constituent electrode under the given montage reference.
    pub fn constituent_attributes(&self, reference: ReferenceType) -> Result<Vec<ChannelAttributes>> {
        match self {
            ChannelId::Unipolar(a) => Ok(vec![parse_channel_name(a)?.with_reference(reference)]),
            ChannelId::Bipolar(a, b) => Ok(vec![
                parse_channel_name(a)?.with_reference(ReferenceType::Bipolar),
                parse_channel_name(b)?.with_reference(ReferenceType::Bipolar),
            ]),
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelId::Unipolar(a) => write!(f, "{a}"),
            ChannelId::Bipolar(a, b) => write!(f, "{a}-{b}"),
        }
    }
}

impl FromStr for ChannelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('-') {
            Some((a, b)) => ChannelId::bipolar(a, b),
            None => ChannelId::unipolar(s),
        }
    }
}

/// Ordered channel list plus the reference scheme of its unipolar channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Montage {
    pub channels: Vec<ChannelId>,
    pub reference: ReferenceType,
}

impl Montage {
    pub fn new(channels: Vec<ChannelId>, reference: ReferenceType) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &channels {
            if !seen.insert(c) {
                return Err(Error::contract(format!("duplicate channel {c} in montage")));
            }
        }
        if channels.is_empty() {
            return Err(Error::contract("montage has no channels"));
        }
        if reference == ReferenceType::Bipolar && channels.iter().any(|c| !c.is_bipolar()) {
            return Err(Error::contract("bipolar montage contains a unipolar channel"));
        }
        Ok(Self { channels, reference })
    }

    pub fn from_names(names: &[&str], reference: ReferenceType) -> Result<Self> {
        let channels = names.iter().map(|n| n.parse()).collect::<Result<Vec<_>>>()?;
        Self::new(channels, reference)
    }

    /// The 19-channel 10-20 unipolar montage.
    pub fn standard_19(reference: ReferenceType) -> Self {
        Self::from_names(&STANDARD_19, reference).expect("standard labels parse")
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.channels.iter().map(ToString::to_string).collect()
    }

    /// Every electrode must appear in the nomenclature table.
    pub fn validate(&self, nomenclature: &Nomenclature) -> Result<()> {
        for c in &self.channels {
            for e in c.electrodes() {
                if nomenclature.get(e).is_none() {
                    return Err(Error::data(format!(
                        "montage electrode {e} is not in the nomenclature table"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub const STANDARD_19: [&str; 19] = [
    "FP1", "FP2", "F7", "F3", "FZ", "F4", "F8", "T3", "C3", "CZ", "C4", "T4", "T5", "P3", "PZ", "P4", "T6", "O1", "O2",
];

/// The 10-20 label table (`name, region, hemisphere, number`).
#[derive(Debug, Clone, PartialEq)]
pub struct Nomenclature {
    sites: BTreeMap<String, ElectrodeSite>,
    order: Vec<String>,
}

impl Nomenclature {
    pub fn standard() -> Self {
        Self::parse(STANDARD_NOMENCLATURE).expect("bundled nomenclature table is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sites = BTreeMap::new();
        let mut order = Vec::new();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header))
                if header.split('\t').collect::<Vec<_>>() == ["name", "region", "hemisphere", "number"] => {}
            _ => {
                return Err(Error::data(
                    "nomenclature table must start with `name\\tregion\\themisphere\\tnumber`",
                ))
            }
        }
        for (lineno, line) in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| Error::data(format!("nomenclature line {}: {what}", lineno + 1));
            let [name, region, hemisphere, number] = cols.as_slice() else {
                return Err(bad("expected 4 tab-separated columns"));
            };
            let region = parse_enum(region, &Region::ALL, Region::as_str).ok_or_else(|| bad("unknown region"))?;
            let hemisphere = parse_enum(hemisphere, &Hemisphere::ALL, Hemisphere::as_str)
                .ok_or_else(|| bad("unknown hemisphere"))?;
            let number: u32 = number.parse().map_err(|_| bad("number is not an integer"))?;
            let site = ElectrodeSite::new(region, hemisphere, number)?;
            let key = name.to_ascii_uppercase();
            order.push(key.clone());
            sites.insert(key, site);
        }
        Ok(Self { sites, order })
    }

    pub fn get(&self, name: &str) -> Option<&ElectrodeSite> {
        self.sites.get(&name.to_ascii_uppercase())
    }

    /// Labels in file order.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Parameter names owned by the positional encoder.
pub mod param_names {
    pub const REGION: &str = "cape.region";
    pub const HEMISPHERE: &str = "cape.hemisphere";
    pub const REFERENCE: &str = "cape.reference";
    pub const NUMBER: &str = "cape.number";
    pub const FUSE1_W: &str = "cape.fuse1.w";
    pub const FUSE1_B: &str = "cape.fuse1.b";
    pub const FUSE2_W: &str = "cape.fuse2.w";
    pub const FUSE2_B: &str = "cape.fuse2.b";

    pub const ALL: [&str; 8] = [
        REGION, HEMISPHERE, REFERENCE, NUMBER, FUSE1_W, FUSE1_B, FUSE2_W, FUSE2_B,
    ];
}

/// Register the encoder's parameters: three attribute tables, the number
/// projection and a one-hidden-layer tanh fusion MLP.
pub fn init_params<R: Rng + ?Sized>(store: &mut ParameterStore, rng: &mut R) {
    use param_names::*;
    let fused = 4 * ATTR_DIM;
    store.insert(REGION, Tensor::randn(Region::ALL.len(), ATTR_DIM, 1.0, rng), false);
    store.insert(
        HEMISPHERE,
        Tensor::randn(Hemisphere::ALL.len(), ATTR_DIM, 1.0, rng),
        false,
    );
    store.insert(
        REFERENCE,
        Tensor::randn(ReferenceType::ALL.len(), ATTR_DIM, 1.0, rng),
        false,
    );
    store.insert(NUMBER, Tensor::randn(1, ATTR_DIM, 1.0, rng), false);
    store.insert(
        FUSE1_W,
        Tensor::randn(fused, EMBED_DIM, (1.0 / fused as f64).sqrt(), rng),
        false,
    );
    store.insert(FUSE1_B, Tensor::zeros(1, EMBED_DIM), false);
    store.insert(
        FUSE2_W,
        Tensor::randn(EMBED_DIM, EMBED_DIM, (1.0 / EMBED_DIM as f64).sqrt(), rng),
        false,
    );
    store.insert(FUSE2_B, Tensor::zeros(1, EMBED_DIM), false);
}

/// Embed a list of attribute tuples on the tape: `n x EMBED_DIM`.
pub fn embed_attributes(tape: &mut Tape, store: &ParameterStore, attrs: &[ChannelAttributes]) -> Result<Var> {
    use param_names::*;
    if attrs.is_empty() {
        return Err(Error::contract("no channel attributes to embed"));
    }
    let region_t = tape.param(store, REGION)?;
    let hemi_t = tape.param(store, HEMISPHERE)?;
    let ref_t = tape.param(store, REFERENCE)?;
    let number_w = tape.param(store, NUMBER)?;

    let region_idx: Vec<usize> = attrs.iter().map(|a| a.region.index()).collect();
    let hemi_idx: Vec<usize> = attrs.iter().map(|a| a.hemisphere.index()).collect();
    let ref_idx: Vec<usize> = attrs.iter().map(|a| a.reference.index()).collect();
    let numbers = Tensor::from_rows(
        attrs.len(),
        1,
        attrs.iter().map(|a| a.number as f64 / NUMBER_SCALE).collect(),
    )?;

    let region = tape.gather_rows(region_t, &region_idx)?;
    let hemi = tape.gather_rows(hemi_t, &hemi_idx)?;
    let reference = tape.gather_rows(ref_t, &ref_idx)?;
    let numbers = tape.constant(numbers);
    let number = tape.matmul(numbers, number_w)?;
    let joined = tape.concat_cols(&[region, hemi, number, reference])?;

    let w1 = tape.param(store, FUSE1_W)?;
    let b1 = tape.param(store, FUSE1_B)?;
    let w2 = tape.param(store, FUSE2_W)?;
    let b2 = tape.param(store, FUSE2_B)?;
    let hidden = tape.linear(joined, w1, Some(b1))?;
    let hidden = tape.tanh(hidden)?;
    tape.linear(hidden, w2, Some(b2))
}

/// Positional embeddings for a channel list: `C x EMBED_DIM`, one row per channel.
///
/// Each distinct electrode/reference pair is embedded once; a unipolar row is
/// `0.5 * (e + e)` (exactly `e`), a bipolar row is `0.5 * (e_a + e_b)`.
pub fn embed_channels(
    tape: &mut Tape,
    store: &ParameterStore,
    channels: &[ChannelId],
    reference: ReferenceType,
) -> Result<Var> {
    let mut unique: Vec<ChannelAttributes> = Vec::new();
    let index_of = |a: ChannelAttributes, unique: &mut Vec<ChannelAttributes>| match unique.iter().position(|u| *u == a)
    {
        Some(i) => i,
        None => {
            unique.push(a);
            unique.len() - 1
        }
    };
    let mut first = Vec::with_capacity(channels.len());
    let mut second = Vec::with_capacity(channels.len());
    for c in channels {
        let attrs = c.constituent_attributes(reference)?;
        let a = index_of(attrs[0], &mut unique);
        let b = match attrs.get(1) {
            Some(&attr) => index_of(attr, &mut unique),
            None => a,
        };
        first.push(a);
        second.push(b);
    }
    let table = embed_attributes(tape, store, &unique)?;
    let lhs = tape.gather_rows(table, &first)?;
    let rhs = tape.gather_rows(table, &second)?;
    let sum = tape.add(lhs, rhs)?;
    tape.scale(sum, 0.5)
}

/// Value-level embedding of one attribute tuple.
pub fn cape_embed(attrs: ChannelAttributes, store: &ParameterStore) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let v = embed_attributes(&mut tape, store, &[attrs])?;
    Ok(tape.value(v).data().to_vec())
}

/// Value-level embedding of a bipolar derivation: the mean of its two constituents.
pub fn bipolar_embed(id: &ChannelId, store: &ParameterStore) -> Result<Vec<f64>> {
    if !id.is_bipolar() {
        return Err(Error::contract(format!("{id} is not a bipolar derivation")));
    }
    let mut tape = Tape::new();
    let v = embed_channels(&mut tape, store, std::slice::from_ref(id), ReferenceType::Bipolar)?;
    Ok(tape.value(v).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        init_params(&mut s, &mut ChaCha8Rng::seed_from_u64(seed));
        s
    }

    #[test]
    fn parses_examples() {
        let fp1 = parse_channel_name("FP1").unwrap();
        assert_eq!(
            (fp1.region, fp1.hemisphere, fp1.number),
            (Region::Frontopolar, Hemisphere::Left, 1)
        );
        let cz = parse_channel_name("CZ").unwrap();
        assert_eq!(
            (cz.region, cz.hemisphere, cz.number),
            (Region::Central, Hemisphere::Midline, 0)
        );
        let t6 = parse_channel_name("T6").unwrap();
        assert_eq!(
            (t6.region, t6.hemisphere, t6.number),
            (Region::Temporal, Hemisphere::Right, 6)
        );
        assert_eq!(parse_channel_name("fp2").unwrap().region, Region::Frontopolar);
        assert_eq!(parse_channel_name("Cz").unwrap().number, 0);
    }

    #[test]
    fn rejects_bad_names() {
        for bad in ["FC1", "X1", "F", "F0", "F1a", "", "CPZ", "T-3"] {
            let err = parse_channel_name(bad).unwrap_err();
            assert!(err.to_string().contains(bad), "{err}");
        }
    }

    #[test]
    fn bipolar_requires_distinct_electrodes() {
        assert!(ChannelId::bipolar("FP1", "fp1").is_err());
        assert_eq!("FP1-F7".parse::<ChannelId>().unwrap().to_string(), "FP1-F7");
    }

    #[test]
    fn reference_changes_embedding() {
        let s = store(3);
        let site = parse_channel_name("FP1").unwrap();
        let avg = cape_embed(site.with_reference(ReferenceType::Average), &s).unwrap();
        let le = cape_embed(site.with_reference(ReferenceType::LinkedEar), &s).unwrap();
        assert_eq!(avg.len(), EMBED_DIM);
        assert_ne!(avg, le);
        assert_eq!(
            avg,
            cape_embed(site.with_reference(ReferenceType::Average), &s).unwrap()
        );
    }

    #[test]
    fn bipolar_is_exact_mean() {
        let s = store(5);
        let id = ChannelId::bipolar("FP1", "F7").unwrap();
        let got = bipolar_embed(&id, &s).unwrap();
        let a = cape_embed(
            parse_channel_name("FP1")
                .unwrap()
                .with_reference(ReferenceType::Bipolar),
            &s,
        )
        .unwrap();
        let b = cape_embed(
            parse_channel_name("F7").unwrap().with_reference(ReferenceType::Bipolar),
            &s,
        )
        .unwrap();
        let expected: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        assert_eq!(got, expected);
        let swapped = bipolar_embed(&ChannelId::bipolar("F7", "FP1").unwrap(), &s).unwrap();
        assert_eq!(got, swapped);
        assert!(bipolar_embed(&ChannelId::unipolar("F7").unwrap(), &s).is_err());
    }

    #[test]
    fn position_in_montage_is_irrelevant() {
        let s = store(9);
        let names = ["FP1", "CZ", "O2", "T3"];
        let chans: Vec<ChannelId> = names.iter().map(|n| n.parse().unwrap()).collect();
        let mut tape = Tape::new();
        let fwd = embed_channels(&mut tape, &s, &chans, ReferenceType::Average).unwrap();
        let rev_chans: Vec<ChannelId> = chans.iter().rev().cloned().collect();
        let rev = embed_channels(&mut tape, &s, &rev_chans, ReferenceType::Average).unwrap();
        for i in 0..names.len() {
            assert_eq!(tape.value(fwd).row(i), tape.value(rev).row(names.len() - 1 - i));
        }
    }

    #[test]
    fn montage_rejects_duplicates() {
        assert!(Montage::from_names(&["FP1", "fp1"], ReferenceType::Average).is_err());
        assert_eq!(Montage::standard_19(ReferenceType::Average).len(), 19);
    }
}
