//! Serde helpers: every integer crosses file boundaries as a decimal string.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::modmath::{Mat2, Vec2};

fn parse<'de, D: Deserializer<'de>, T: std::str::FromStr>(s: &str) -> Result<T, D::Error>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| D::Error::custom(format!("bad decimal {s:?}: {e}")))
}

pub mod dec_u64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        parse::<D, u64>(&s)
    }
}

pub mod dec_u128 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        parse::<D, u128>(&s)
    }
}

pub mod dec_opt_u128 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<u128>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|x| x.to_string()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u128>, D::Error> {
        Option::<String>::deserialize(d)?.map(|s| parse::<D, u128>(&s)).transpose()
    }
}

pub mod dec_vec_u64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(u64::to_string).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        Vec::<String>::deserialize(d)?.iter().map(|s| parse::<D, u64>(s)).collect()
    }
}

/// A list of blocks as `[["c1", "c2"], ...]`.
pub mod dec_blocks {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vec2], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|b| [b.c1.to_string(), b.c2.to_string()])
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec2>, D::Error> {
        Vec::<[String; 2]>::deserialize(d)?
            .iter()
            .map(|[a, b]| Ok(Vec2::new(parse::<D, u64>(a)?, parse::<D, u64>(b)?)))
            .collect()
    }
}

/// A matrix as `[["m11", "m12"], ["m21", "m22"]]`.
pub mod dec_mat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat2, s: S) -> Result<S::Ok, S::Error> {
        [[m.m11.to_string(), m.m12.to_string()], [m.m21.to_string(), m.m22.to_string()]].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat2, D::Error> {
        let [[a, b], [c, e]] = <[[String; 2]; 2]>::deserialize(d)?;
        Ok(Mat2::new(
            parse::<D, u64>(&a)?,
            parse::<D, u64>(&b)?,
            parse::<D, u64>(&c)?,
            parse::<D, u64>(&e)?,
        ))
    }
}

pub mod dec_opt_mat {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "dec_mat")] Mat2);

    pub fn serialize<S: Serializer>(m: &Option<Mat2>, s: S) -> Result<S::Ok, S::Error> {
        m.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat2>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

pub mod dec_biguint {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.as_bytes(), 10).ok_or_else(|| D::Error::custom(format!("invalid decimal integer {s:?}")))
    }
}
