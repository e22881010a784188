//! Traditional feature vectors and canonical string representations of inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{Assignment, ParamKind, ParamValue, RegressionTask, TaskError};

#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error(transparent)]
    Invalid(#[from] TaskError),
    #[error("cannot parse serialized input: {0}")]
    Parse(String),
}

/// Where one parameter lands in the traditional feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSlice {
    pub offset: usize,
    pub width: usize,
}

/// Continuous params take one min-max scaled coordinate, categorical params
/// a one-hot block in declared choice order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraditionalFeatureLayout {
    slices: Vec<FeatureSlice>,
    width: usize,
}

impl TraditionalFeatureLayout {
    pub fn for_task(task: &RegressionTask) -> Self {
        let mut offset = 0;
        let slices = task
            .params()
            .iter()
            .map(|p| {
                let width = match &p.kind {
                    ParamKind::Continuous { .. } => 1,
                    ParamKind::Categorical { choices } => choices.len(),
                };
                let s = FeatureSlice { offset, width };
                offset += width;
                s
            })
            .collect();
        TraditionalFeatureLayout {
            slices,
            width: offset,
        }
    }

    /// `d_trad`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slices(&self) -> &[FeatureSlice] {
        &self.slices
    }
}

/// Writes the traditional features of `x` into `out` (length `d_trad`).
pub fn featurize_into(
    task: &RegressionTask,
    layout: &TraditionalFeatureLayout,
    x: &Assignment,
    out: &mut [f64],
) -> Result<(), FeaturizeError> {
    task.validate(x)?;
    debug_assert_eq!(out.len(), layout.width());
    out.iter_mut().for_each(|v| *v = 0.0);
    for ((spec, value), slice) in task.params().iter().zip(x.values()).zip(layout.slices()) {
        match (&spec.kind, value) {
            (ParamKind::Continuous { lo, hi }, ParamValue::Real(v)) => {
                out[slice.offset] = (v - lo) / (hi - lo);
            }
            (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => {
                let k = choices.iter().position(|choice| choice == c).unwrap();
                out[slice.offset + k] = 1.0;
            }
            _ => unreachable!("validated assignment matches param kinds"),
        }
    }
    Ok(())
}

pub fn featurize_traditional(
    task: &RegressionTask,
    x: &Assignment,
) -> Result<Vec<f64>, FeaturizeError> {
    let layout = TraditionalFeatureLayout::for_task(task);
    let mut out = vec![0.0; layout.width()];
    featurize_into(task, &layout, x, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StringVariant {
    /// `{name1:val1,name2:val2}`
    FullDict,
    /// `[val1,val2]`
    ValuesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StringFormat {
    pub variant: StringVariant,
    /// Significant digits used for real values.
    pub float_precision: usize,
    #[serde(default)]
    pub space_after_comma: bool,
}

impl Default for StringFormat {
    fn default() -> Self {
        StringFormat {
            variant: StringVariant::FullDict,
            float_precision: 4,
            space_after_comma: false,
        }
    }
}

impl StringFormat {
    pub fn full() -> Self {
        StringFormat::default()
    }

    pub fn values_only() -> Self {
        StringFormat {
            variant: StringVariant::ValuesOnly,
            ..StringFormat::default()
        }
    }
}

/// Renders `v` rounded to `digits` significant digits, without trailing
/// zeros. Positional notation for decimal exponents in [-5, 15], otherwise
/// `<mantissa>e<exp>`.
pub fn format_significant(v: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let mantissa_digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();

    let body = if (-5..=15).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if mantissa_digits.len() <= int_len {
                let mut s = mantissa_digits.clone();
                s.extend(std::iter::repeat_n('0', int_len - mantissa_digits.len()));
                s
            } else {
                let (int_part, frac) = mantissa_digits.split_at(int_len);
                trim_fraction(format!("{int_part}.{frac}"))
            }
        } else {
            let zeros = "0".repeat((-exp - 1) as usize);
            trim_fraction(format!("0.{zeros}{mantissa_digits}"))
        }
    } else {
        let (lead, rest) = mantissa_digits.split_at(1);
        let m = if rest.is_empty() {
            lead.to_string()
        } else {
            trim_fraction(format!("{lead}.{rest}"))
        };
        format!("{m}e{exp}")
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}

fn trim_fraction(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn render_value(value: &ParamValue, fmt: &StringFormat) -> String {
    match value {
        ParamValue::Real(v) => format_significant(*v, fmt.float_precision),
        ParamValue::Choice(c) => format!("'{c}'"),
    }
}

/// Serializes `x` in declared parameter order.
pub fn serialize(
    task: &RegressionTask,
    x: &Assignment,
    fmt: &StringFormat,
) -> Result<String, FeaturizeError> {
    task.validate(x)?;
    let sep = if fmt.space_after_comma { ", " } else { "," };
    let s = match fmt.variant {
        StringVariant::FullDict => {
            let items: Vec<String> = task
                .params()
                .iter()
                .zip(x.values())
                .map(|(p, v)| format!("{}:{}", p.name, render_value(v, fmt)))
                .collect();
            format!("{{{}}}", items.join(sep))
        }
        StringVariant::ValuesOnly => {
            let items: Vec<String> = x.values().iter().map(|v| render_value(v, fmt)).collect();
            format!("[{}]", items.join(sep))
        }
    };
    Ok(s)
}

/// Splits on commas that are not inside single quotes.
fn split_items(body: &str) -> Vec<&str> {
    let mut items = Vec::new();
    let mut in_quote = false;
    let mut start = 0;
    for (i, ch) in body.char_indices() {
        match ch {
            '\'' => in_quote = !in_quote,
            ',' if !in_quote => {
                items.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    items.push(&body[start..]);
    items
}

/// Parses a `full_dict` string back into an assignment for `task`.
pub fn parse_full_dict(task: &RegressionTask, s: &str) -> Result<Assignment, FeaturizeError> {
    let perr = |m: String| FeaturizeError::Parse(m);
    let body = s
        .trim()
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| perr("missing enclosing braces".into()))?;
    let items = split_items(body);
    if items.len() != task.dof() {
        return Err(perr(format!(
            "expected {} items, found {}",
            task.dof(),
            items.len()
        )));
    }
    let mut values = Vec::with_capacity(items.len());
    for (spec, item) in task.params().iter().zip(items) {
        let (key, raw) = item
            .trim()
            .split_once(':')
            .ok_or_else(|| perr(format!("item '{item}' has no ':'")))?;
        if key != spec.name {
            return Err(perr(format!("expected key `{}`, found `{key}`", spec.name)));
        }
        let value = if spec.is_continuous() {
            ParamValue::Real(
                raw.parse()
                    .map_err(|_| perr(format!("bad number '{raw}' for `{key}`")))?,
            )
        } else {
            let inner = raw
                .strip_prefix('\'')
                .and_then(|r| r.strip_suffix('\''))
                .ok_or_else(|| perr(format!("choice for `{key}` is not quoted")))?;
            ParamValue::Choice(inner.to_string())
        };
        values.push(value);
    }
    let x = Assignment(values);
    task.validate(&x)?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbob::FunctionId;
    use crate::task::{ParamSpec, TaskSource};
    use proptest::prelude::*;

    fn offline(params: Vec<ParamSpec>) -> RegressionTask {
        RegressionTask::new("t", params, TaskSource::Offline("f".into())).unwrap()
    }

    #[test]
    fn continuous_midpoint_and_one_hot() {
        let task = offline(vec![
            ParamSpec::continuous("a", -5.0, 5.0).unwrap(),
            ParamSpec::categorical("c", ["a", "b", "c"]).unwrap(),
        ]);
        let x = Assignment(vec![ParamValue::Real(0.0), ParamValue::Choice("b".into())]);
        assert_eq!(featurize_traditional(&task, &x).unwrap(), vec![0.5, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn categorical_widens_feature_vector() {
        let task = offline(vec![
            ParamSpec::continuous("a", 0.0, 1.0).unwrap(),
            ParamSpec::continuous("b", 0.0, 1.0).unwrap(),
            ParamSpec::categorical("c", ["x", "y", "z"]).unwrap(),
        ]);
        let layout = TraditionalFeatureLayout::for_task(&task);
        assert_eq!(layout.width(), 5);
        assert!(layout.width() > task.dof());
        let synth = RegressionTask::synthetic(FunctionId::SPHERE, 7).unwrap();
        assert_eq!(TraditionalFeatureLayout::for_task(&synth).width(), 7);
    }

    #[test]
    fn featurize_rejects_invalid_values() {
        let task = offline(vec![ParamSpec::categorical("c", ["x", "y"]).unwrap()]);
        let bad = Assignment(vec![ParamValue::Choice("w".into())]);
        assert!(featurize_traditional(&task, &bad).is_err());
        let task = offline(vec![ParamSpec::continuous("a", 0.0, 1.0).unwrap()]);
        assert!(featurize_traditional(&task, &Assignment::from_reals([2.0])).is_err());
    }

    #[test]
    fn significant_digit_rendering() {
        let cases = [
            (0.32, "0.32"),
            (-4.21, "-4.21"),
            (3.24159, "3.242"),
            (128.0, "128"),
            (100000.0, "100000"),
            (0.0696, "0.0696"),
            (0.00230001, "0.0023"),
            (12346.0, "12350"),
            (-0.0, "0"),
            (1.0, "1"),
            (2.5e-7, "2.5e-7"),
            (1e20, "1e20"),
            (4.99996, "5"),
        ];
        for (v, want) in cases {
            assert_eq!(format_significant(v, 4), want, "{v}");
        }
        assert_eq!(format_significant(3.24159, 2), "3.2");
    }

    #[test]
    fn bbob_strings() {
        let task = RegressionTask::synthetic(FunctionId::SPHERE, 4).unwrap();
        let x = Assignment::from_reals([0.32, -4.21, 3.12, 1.56]);
        assert_eq!(
            serialize(&task, &x, &StringFormat::full()).unwrap(),
            "{x0:0.32,x1:-4.21,x2:3.12,x3:1.56}"
        );
        assert_eq!(
            serialize(&task, &x, &StringFormat::values_only()).unwrap(),
            "[0.32,-4.21,3.12,1.56]"
        );
        let spaced = StringFormat {
            space_after_comma: true,
            ..StringFormat::full()
        };
        assert_eq!(
            serialize(&task, &x, &spaced).unwrap(),
            "{x0:0.32, x1:-4.21, x2:3.12, x3:1.56}"
        );
    }

    #[test]
    fn categorical_strings_are_single_quoted() {
        let task = offline(vec![
            ParamSpec::categorical("activation_fn", ["relu", "selu"]).unwrap(),
            ParamSpec::categorical("batch_norm", ["True", "False"]).unwrap(),
        ]);
        let x = Assignment(vec![
            ParamValue::Choice("selu".into()),
            ParamValue::Choice("False".into()),
        ]);
        assert_eq!(
            serialize(&task, &x, &StringFormat::full()).unwrap(),
            "{activation_fn:'selu',batch_norm:'False'}"
        );
        assert_eq!(parse_full_dict(&task, "{activation_fn:'selu',batch_norm:'False'}").unwrap(), x);
    }

    #[test]
    fn isometry_on_equal_bounds() {
        let task = RegressionTask::synthetic(FunctionId::SPHERE, 3).unwrap();
        let a = Assignment::from_reals([1.0, -2.0, 0.5]);
        let b = Assignment::from_reals([-3.0, 4.0, 0.0]);
        let fa = featurize_traditional(&task, &a).unwrap();
        let fb = featurize_traditional(&task, &b).unwrap();
        let d_feat: f64 = fa.iter().zip(&fb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let d_x: f64 = (16.0f64 + 36.0 + 0.25).sqrt();
        assert!((d_feat - d_x / 10.0).abs() < 1e-12);
    }

    fn mixed_task() -> RegressionTask {
        offline(vec![
            ParamSpec::continuous("lr", 1e-5, 1.0).unwrap(),
            ParamSpec::categorical("opt", ["adam", "sgd, momentum", "rms"]).unwrap(),
            ParamSpec::continuous("units", -500.0, 500.0).unwrap(),
        ])
    }

    proptest! {
        #[test]
        fn full_dict_round_trips(lr in 1e-5f64..1.0, k in 0usize..3, units in -500.0f64..500.0) {
            let task = mixed_task();
            let choice = ["adam", "sgd, momentum", "rms"][k];
            let x = Assignment(vec![
                ParamValue::Real(lr),
                ParamValue::Choice(choice.into()),
                ParamValue::Real(units),
            ]);
            let s = serialize(&task, &x, &StringFormat::full()).unwrap();
            let back = parse_full_dict(&task, &s).unwrap();
            prop_assert_eq!(back.values()[1].clone(), x.values()[1].clone());
            for i in [0, 2] {
                let (a, b) = (x.values()[i].as_real().unwrap(), back.values()[i].as_real().unwrap());
                prop_assert!(((a - b) / a).abs() <= 5e-4, "{} vs {}", a, b);
            }
        }

        #[test]
        fn one_param_change_changes_one_substring(
            xs in proptest::collection::vec(-5.0f64..5.0, 4),
            j in 0usize..4,
            v in -5.0f64..5.0,
        ) {
            let task = RegressionTask::synthetic(FunctionId::SPHERE, 4).unwrap();
            let fmt = StringFormat::full();
            let a = Assignment::from_reals(xs.clone());
            let mut ys = xs.clone();
            ys[j] = v;
            let b = Assignment::from_reals(ys);
            let sa = serialize(&task, &a, &fmt).unwrap();
            prop_assert_eq!(&sa, &serialize(&task, &a, &fmt).unwrap());
            let sb = serialize(&task, &b, &fmt).unwrap();
            let ia = split_items(&sa[1..sa.len() - 1]);
            let ib = split_items(&sb[1..sb.len() - 1]);
            for i in 0..4 {
                if i != j {
                    prop_assert_eq!(ia[i], ib[i]);
                }
            }
        }
    }
}
