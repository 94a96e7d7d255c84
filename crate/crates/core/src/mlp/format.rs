//! Plain-text network format, `mlp-network v1`:
//!
//! ```text
//! # key: value            (optional metadata comments)
//! mlp-network v1
//! topology 6 15 30 12
//! activation logsig logsig logsig
//! trained_epochs 20000
//! layer 1 15 6            (index, rows, columns)
//! w <row 1, comma separated>
//! ...
//! b <biases>
//! ...
//! scaler
//! in_min ...  / in_max ... / out_min ... / out_max ... / band lo,hi
//! ```

use super::{Activation, MlpNetwork, Scaler, Topology};
use crate::textio::{self, Metadata};
use crate::{Error, Result};

/// A network together with the scaling it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: MlpNetwork,
    pub scaler: Scaler,
}

const MAGIC: &str = "mlp-network v1";

fn floats(rest: &str, line: usize, want: usize) -> Result<Vec<f64>> {
    let v = textio::split_fields(rest)
        .iter()
        .enumerate()
        .map(|(c, f)| textio::parse_f64(f, line, c + 1))
        .collect::<Result<Vec<_>>>()?;
    if v.len() != want {
        return Err(Error::format(line, format!("expected {want} values, found {}", v.len())));
    }
    Ok(v)
}

impl TrainedModel {
    pub fn to_text(&self, meta: &Metadata) -> String {
        let net = &self.network;
        let mut out = String::new();
        meta.write_to(&mut out);
        out.push_str(MAGIC);
        out.push('\n');
        let sizes: Vec<String> = net.topology().sizes().iter().map(usize::to_string).collect();
        out.push_str(&format!("topology {}\n", sizes.join(" ")));
        let acts: Vec<&str> = net.layers.iter().map(|l| l.activation.name()).collect();
        out.push_str(&format!("activation {}\n", acts.join(" ")));
        out.push_str(&format!("trained_epochs {}\n", net.trained_epochs));
        for (k, layer) in net.layers.iter().enumerate() {
            out.push_str(&format!("layer {} {} {}\n", k + 1, layer.n_out, layer.n_in));
            for row in layer.weights.chunks_exact(layer.n_in) {
                out.push_str(&format!("w {}\n", textio::join_f64(row)));
            }
            out.push_str(&format!("b {}\n", textio::join_f64(&layer.biases)));
        }
        let s = &self.scaler;
        out.push_str("scaler\n");
        out.push_str(&format!("in_min {}\n", textio::join_f64(&s.in_min)));
        out.push_str(&format!("in_max {}\n", textio::join_f64(&s.in_max)));
        out.push_str(&format!("out_min {}\n", textio::join_f64(&s.out_min)));
        out.push_str(&format!("out_max {}\n", textio::join_f64(&s.out_max)));
        out.push_str(&format!("band {}\n", textio::join_f64(&[s.band.0, s.band.1])));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = textio::data_lines(text);
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::format(0, format!("unexpected end of file, expected {what}")))
        };
        let keyed = |(n, line): (usize, &str), key: &str| -> Result<(usize, String)> {
            match line.split_once(' ') {
                Some((k, rest)) if k == key => Ok((n, rest.trim().to_string())),
                _ if line == key => Ok((n, String::new())),
                _ => Err(Error::format(n, format!("expected `{key}`"))),
            }
        };

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::format(n, format!("expected `{MAGIC}`")));
        }
        let (n, topo) = keyed(next("topology")?, "topology")?;
        let sizes = topo
            .split_whitespace()
            .map(|s| textio::parse_usize(s, n, 2))
            .collect::<Result<Vec<_>>>()?;
        let topology = Topology::new(sizes)?;
        let (_, acts) = keyed(next("activation")?, "activation")?;
        let acts = acts
            .split_whitespace()
            .map(str::parse::<Activation>)
            .collect::<Result<Vec<_>>>()?;
        let mut network = MlpNetwork::zeros(&topology, &acts)?;
        let (n, epochs) = keyed(next("trained_epochs")?, "trained_epochs")?;
        network.trained_epochs = textio::parse_usize(&epochs, n, 2)?;

        for k in 0..network.layers.len() {
            let (n, header) = keyed(next("layer")?, "layer")?;
            let (n_out, n_in) = (network.layers[k].n_out, network.layers[k].n_in);
            if header != format!("{} {} {}", k + 1, n_out, n_in) {
                return Err(Error::format(n, format!("expected layer {} {} {}", k + 1, n_out, n_in)));
            }
            let mut weights = Vec::with_capacity(n_out * n_in);
            for _ in 0..n_out {
                let (n, row) = keyed(next("weight row")?, "w")?;
                weights.extend(floats(&row, n, n_in)?);
            }
            let (n, b) = keyed(next("biases")?, "b")?;
            network.layers[k].biases = floats(&b, n, n_out)?;
            network.layers[k].weights = weights;
        }

        keyed(next("scaler")?, "scaler")?;
        let (n_in, n_out) = (topology.inputs(), topology.outputs());
        let mut vec_field = |key: &str, len: usize| -> Result<Vec<f64>> {
            let (n, rest) = keyed(next(key)?, key)?;
            floats(&rest, n, len)
        };
        let in_min = vec_field("in_min", n_in)?;
        let in_max = vec_field("in_max", n_in)?;
        let out_min = vec_field("out_min", n_out)?;
        let out_max = vec_field("out_max", n_out)?;
        let band = vec_field("band", 2)?;
        let scaler = Scaler { in_min, in_max, out_min, out_max, band: (band[0], band[1]) };
        scaler.validate()?;
        Ok(Self { network, scaler })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_network_with, scaler::DEFAULT_BAND};

    fn model() -> TrainedModel {
        let t: Topology = "3:4:5:2".parse().unwrap();
        let mut network =
            init_network_with(&t, &[Activation::TanSigmoid, Activation::LogSigmoid, Activation::Linear], 17).unwrap();
        network.trained_epochs = 12;
        network.layers[2].biases = vec![1e-300, -0.1];
        let scaler = Scaler {
            in_min: vec![0.0, 1.5, 1e-7],
            in_max: vec![1.0, 2.25, 3e9],
            out_min: vec![0.0, 0.0],
            out_max: vec![30.0, 29.999999999999996],
            band: DEFAULT_BAND,
        };
        TrainedModel { network, scaler }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let text = m.to_text(&Metadata::new().with("seed", 3));
        let back = TrainedModel::from_text(&text).unwrap();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.network.parameters()), bits(m.network.parameters()));
        assert_eq!(back, m);
        assert_eq!(back.to_text(&Metadata::new().with("seed", 3)), text);
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let text = model().to_text(&Metadata::new());
        assert!(TrainedModel::from_text(&text.replace("v1", "v2")).is_err());
        assert!(TrainedModel::from_text(&text.replace("layer 2 5 4", "layer 2 5 3")).is_err());
        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(TrainedModel::from_text(&truncated).is_err());
    }
}
