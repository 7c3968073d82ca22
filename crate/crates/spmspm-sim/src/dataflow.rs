//! The six SpMSpM dataflows and their static properties.
//!
//! A dataflow is a loop order over the triple-nested matmul. The
//! co-iteration (K) level picks inner product / outer product /
//! Gustavson's; the outermost independent dimension picks the M- or
//! N-stationary variant. Each dataflow fixes which tensor is stationary,
//! the operand compression formats, the output format and the
//! intersection/merging style.
//!
//! Between layers, a producer's output can feed a consumer directly only
//! when the emitted format matches the format the consumer needs for its
//! activation operand; otherwise an explicit CSR<->CSC conversion is
//! required. M-stationary dataflows emit CSR, N-stationary emit CSC, so
//! the legal-transition matrix follows from the format columns alone.

use crate::sparse::MajorAxis;
use crate::{Error, Result};

/// Loop-order dataflow variants. The declaration order is the tie-break
/// order used by selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Dataflow {
    /// Inner product, M-stationary (loop order MNK).
    IpM,
    /// Outer product, M-stationary (KMN).
    OpM,
    /// Gustavson's, M-stationary (MKN).
    GustM,
    /// Inner product, N-stationary (NMK).
    IpN,
    /// Outer product, N-stationary (KNM).
    OpN,
    /// Gustavson's, N-stationary (NKM).
    GustN,
}

/// The three dataflow families, independent of stationarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Ip,
    Op,
    Gust,
}

/// Which matrix a taxonomy column refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorId {
    A,
    B,
    C,
}

/// Intersection style needed to pair effectual operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intersection {
    /// Scalar-scalar coordinate match (inner product).
    ScalarScalar,
    /// A scalar coordinate retrieves a whole fiber (Gustavson's).
    LeaderFollower,
    /// No intersection required (outer product).
    None,
}

/// Merging style required for the partial sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Merging {
    /// Complete sums are produced directly.
    None,
    /// Scalar psums across partial matrices must be merged.
    Scalar,
    /// Psum fibers for one output fiber must be merged.
    Fiber,
}

/// One taxonomy row: stationarity, formats and psum handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataflowProperties {
    pub stationary_tensor: TensorId,
    pub stationary_fiber: TensorId,
    pub streaming_tensor: TensorId,
    pub a_format: MajorAxis,
    pub b_format: MajorAxis,
    pub c_format: MajorAxis,
    pub intersection: Intersection,
    pub merging: Merging,
}

use Intersection as Ix;
use MajorAxis::{Col, Row};
use Merging as Mg;
use TensorId::{A, B, C};

const PROPERTIES: [DataflowProperties; 6] = [
    // IpM (MNK)
    DataflowProperties {
        stationary_tensor: C,
        stationary_fiber: A,
        streaming_tensor: B,
        a_format: Row,
        b_format: Col,
        c_format: Row,
        intersection: Ix::ScalarScalar,
        merging: Mg::None,
    },
    // OpM (KMN)
    DataflowProperties {
        stationary_tensor: A,
        stationary_fiber: B,
        streaming_tensor: C,
        a_format: Col,
        b_format: Row,
        c_format: Row,
        intersection: Ix::None,
        merging: Mg::Scalar,
    },
    // GustM (MKN)
    DataflowProperties {
        stationary_tensor: A,
        stationary_fiber: C,
        streaming_tensor: B,
        a_format: Row,
        b_format: Row,
        c_format: Row,
        intersection: Ix::LeaderFollower,
        merging: Mg::Fiber,
    },
    // IpN (NMK)
    DataflowProperties {
        stationary_tensor: C,
        stationary_fiber: B,
        streaming_tensor: A,
        a_format: Row,
        b_format: Col,
        c_format: Col,
        intersection: Ix::ScalarScalar,
        merging: Mg::None,
    },
    // OpN (KNM)
    DataflowProperties {
        stationary_tensor: B,
        stationary_fiber: A,
        streaming_tensor: C,
        a_format: Col,
        b_format: Row,
        c_format: Col,
        intersection: Ix::None,
        merging: Mg::Scalar,
    },
    // GustN (NKM)
    DataflowProperties {
        stationary_tensor: B,
        stationary_fiber: C,
        streaming_tensor: A,
        a_format: Col,
        b_format: Col,
        c_format: Col,
        intersection: Ix::LeaderFollower,
        merging: Mg::Fiber,
    },
];

impl Dataflow {
    pub const ALL: [Dataflow; 6] = [
        Dataflow::IpM,
        Dataflow::OpM,
        Dataflow::GustM,
        Dataflow::IpN,
        Dataflow::OpN,
        Dataflow::GustN,
    ];

    pub fn properties(self) -> &'static DataflowProperties {
        &PROPERTIES[self as usize]
    }

    /// Loop order, outermost to innermost.
    pub fn loop_order(self) -> &'static str {
        match self {
            Dataflow::IpM => "MNK",
            Dataflow::OpM => "KMN",
            Dataflow::GustM => "MKN",
            Dataflow::IpN => "NMK",
            Dataflow::OpN => "KNM",
            Dataflow::GustN => "NKM",
        }
    }

    /// Name accepted and printed on the CLI.
    pub fn cli_name(self) -> &'static str {
        match self {
            Dataflow::IpM => "ip-m",
            Dataflow::OpM => "op-m",
            Dataflow::GustM => "gust-m",
            Dataflow::IpN => "ip-n",
            Dataflow::OpN => "op-n",
            Dataflow::GustN => "gust-n",
        }
    }

    pub fn parse_cli_name(name: &str) -> Result<Dataflow> {
        Dataflow::ALL
            .into_iter()
            .find(|d| d.cli_name() == name)
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown dataflow {name:?} (expected one of ip-m, op-m, gust-m, ip-n, op-n, gust-n)"
                ))
            })
    }

    pub fn family(self) -> Family {
        match self {
            Dataflow::IpM | Dataflow::IpN => Family::Ip,
            Dataflow::OpM | Dataflow::OpN => Family::Op,
            Dataflow::GustM | Dataflow::GustN => Family::Gust,
        }
    }

    pub fn is_m_stationary(self) -> bool {
        matches!(self, Dataflow::IpM | Dataflow::OpM | Dataflow::GustM)
    }

    /// The same family with M and N stationarity exchanged.
    pub fn swapped_mn(self) -> Dataflow {
        match self {
            Dataflow::IpM => Dataflow::IpN,
            Dataflow::OpM => Dataflow::OpN,
            Dataflow::GustM => Dataflow::GustN,
            Dataflow::IpN => Dataflow::IpM,
            Dataflow::OpN => Dataflow::OpM,
            Dataflow::GustN => Dataflow::GustM,
        }
    }
}

/// Shorthand for the taxonomy lookup.
pub fn properties(d: Dataflow) -> &'static DataflowProperties {
    d.properties()
}

/// Required operand formats `(A, B)` for a dataflow.
pub fn required_formats(d: Dataflow) -> (MajorAxis, MajorAxis) {
    let p = d.properties();
    (p.a_format, p.b_format)
}

/// True when feeding `producer`'s output into `consumer`'s activation
/// operand requires an explicit format conversion. The produced matrix
/// feeds operand A of the consumer; weights are assumed staged offline in
/// whichever format operand B needs.
pub fn transition_needs_conversion(producer: Dataflow, consumer: Dataflow) -> bool {
    producer.properties().c_format != consumer.properties().a_format
}

/// Variant of the transition rule for chains where the produced matrix
/// feeds operand B instead.
pub fn transition_needs_conversion_feeding_b(producer: Dataflow, consumer: Dataflow) -> bool {
    producer.properties().c_format != consumer.properties().b_format
}

/// Consumers reachable from `producer` without a conversion, in tie-break
/// order.
pub fn legal_consumers(producer: Dataflow) -> Vec<Dataflow> {
    Dataflow::ALL
        .into_iter()
        .filter(|&c| !transition_needs_conversion(producer, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_row_ip_m() {
        let p = properties(Dataflow::IpM);
        assert_eq!(p.stationary_tensor, C);
        assert_eq!(p.stationary_fiber, A);
        assert_eq!(p.streaming_tensor, B);
        assert_eq!((p.a_format, p.b_format, p.c_format), (Row, Col, Row));
        assert_eq!(p.intersection, Ix::ScalarScalar);
        assert_eq!(p.merging, Mg::None);
    }

    #[test]
    fn taxonomy_row_op_m() {
        let p = properties(Dataflow::OpM);
        assert_eq!(p.stationary_tensor, A);
        assert_eq!(p.streaming_tensor, C);
        assert_eq!((p.a_format, p.b_format, p.c_format), (Col, Row, Row));
        assert_eq!(p.intersection, Ix::None);
        assert_eq!(p.merging, Mg::Scalar);
    }

    #[test]
    fn taxonomy_row_gust_n() {
        let p = properties(Dataflow::GustN);
        assert_eq!((p.a_format, p.b_format, p.c_format), (Col, Col, Col));
        assert_eq!(p.merging, Mg::Fiber);
    }

    #[test]
    fn required_format_examples() {
        assert_eq!(required_formats(Dataflow::IpM), (Row, Col));
        assert_eq!(required_formats(Dataflow::OpM), (Col, Row));
        assert_eq!(required_formats(Dataflow::GustM), (Row, Row));
    }

    #[test]
    fn output_format_follows_stationarity() {
        for d in Dataflow::ALL {
            let want = if d.is_m_stationary() { Row } else { Col };
            assert_eq!(d.properties().c_format, want, "{d:?}");
        }
    }

    #[test]
    fn transition_examples() {
        assert!(!transition_needs_conversion(Dataflow::IpM, Dataflow::GustM));
        assert!(transition_needs_conversion(Dataflow::IpM, Dataflow::OpM));
        assert!(!transition_needs_conversion(Dataflow::GustN, Dataflow::OpN));
    }

    #[test]
    fn every_producer_has_legal_consumers() {
        for d in Dataflow::ALL {
            assert!(!legal_consumers(d).is_empty());
        }
    }

    #[test]
    fn cli_names_round_trip() {
        for d in Dataflow::ALL {
            assert_eq!(Dataflow::parse_cli_name(d.cli_name()).unwrap(), d);
        }
        assert!(Dataflow::parse_cli_name("ip").is_err());
    }

    #[test]
    fn tie_break_order_is_declaration_order() {
        let mut sorted = Dataflow::ALL.to_vec();
        sorted.sort();
        assert_eq!(sorted, Dataflow::ALL.to_vec());
    }
}
