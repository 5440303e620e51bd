//! The requesting side of the split: runs the public client half locally,
//! ships only its output activations, and undoes the label fuzz on the
//! reply.
//!
//! The raw inputs and the complement signal never touch the transport —
//! only the activation vector leaving the client half does. The signal is
//! concatenated locally before the published layers run, and recovery
//! happens locally after the response arrives.

use super::wire::{read_message, write_message, WireMessage};
use crate::error::{Error, Result};
use crate::labeling::{encode_signal, recover_output, recover_output_n, SignalMode};
use crate::secure::ClientHalf;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};

/// One remote inference round-trip over a fresh TCP connection.
///
/// `signal_value` is the complement signal (`0`/`1` in binary mode, the
/// offset in n-class mode); the returned label is already recovered, i.e.
/// it is the model's true prediction for `d_in`.
pub fn client_infer(
    client: &ClientHalf<f64>,
    d_in: &[f64],
    signal_value: u32,
    mode: SignalMode,
    endpoint: impl ToSocketAddrs,
) -> Result<u32> {
    let mut stream = TcpStream::connect(endpoint).map_err(Error::Transport)?;
    stream.set_nodelay(true).map_err(Error::Transport)?;
    client_infer_on(client, d_in, signal_value, mode, &mut stream)
}

/// [`client_infer`] over any byte transport — lets tests script the peer
/// and inspect exactly which bytes leave the client.
pub fn client_infer_on<T: Read + Write>(
    client: &ClientHalf<f64>,
    d_in: &[f64],
    signal_value: u32,
    mode: SignalMode,
    transport: &mut T,
) -> Result<u32> {
    mode.validate()?;
    let concat = client.concat();
    if mode.encoded_width() != concat.cs_width {
        return Err(Error::Contract(format!(
            "signal mode encodes {} values but the model reserves {} signal inputs",
            mode.encoded_width(),
            concat.cs_width
        )));
    }
    match mode {
        SignalMode::Binary { .. } if client.n_classes() != 2 => {
            return Err(Error::Contract(format!(
                "binary signal mode requires 2 classes, the model has {}",
                client.n_classes()
            )));
        }
        SignalMode::Offset { n_classes } if n_classes != client.n_classes() => {
            return Err(Error::Contract(format!(
                "signal mode is for {n_classes} classes, the model has {}",
                client.n_classes()
            )));
        }
        _ => {}
    }
    let encoded = encode_signal::<f64>(signal_value, mode)?;
    let d_c_out = client.forward(d_in, &encoded)?;

    write_message(
        transport,
        &WireMessage::InferRequest {
            vector: d_c_out.into_vec(),
        },
    )?;
    match read_message(transport)? {
        WireMessage::InferResponse { label, n_classes } => {
            if usize::from(n_classes) != client.n_classes() {
                return Err(Error::Protocol(format!(
                    "server reports {n_classes} classes, the client half expects {}",
                    client.n_classes()
                )));
            }
            if label >= n_classes {
                return Err(Error::Protocol(format!(
                    "label {label} is out of range for {n_classes} classes"
                )));
            }
            match mode {
                SignalMode::Binary { .. } => recover_output(u32::from(label), signal_value),
                SignalMode::Offset { n_classes } => {
                    recover_output_n(u32::from(label), signal_value, n_classes)
                }
            }
        }
        WireMessage::Error { code, message } => Err(Error::Remote { code, message }),
        WireMessage::InferRequest { .. } => Err(Error::Protocol(
            "server answered with a request frame".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ConcatSpec, DenseLayer, LayerSpec, Model};
    use crate::protocol::wire::encode_message;
    use crate::secure::partition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    /// Records everything written and plays back a canned reply.
    struct ScriptedTransport {
        reply: Cursor<Vec<u8>>,
        written: Vec<u8>,
    }

    impl ScriptedTransport {
        fn answering(message: &WireMessage) -> Self {
            Self {
                reply: Cursor::new(encode_message(message).unwrap()),
                written: Vec::new(),
            }
        }

        fn raw(bytes: Vec<u8>) -> Self {
            Self {
                reply: Cursor::new(bytes),
                written: Vec::new(),
            }
        }
    }

    impl Read for ScriptedTransport {
        fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
            self.reply.read(buf)
        }
    }

    impl Write for ScriptedTransport {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.written.extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    fn binary_client(seed: u64) -> ClientHalf<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = DenseLayer::glorot(7, 8, Activation::Relu, &mut rng).unwrap();
        let l2 = DenseLayer::glorot(8, 2, Activation::Softmax, &mut rng).unwrap();
        let model = Model::new(
            vec![LayerSpec::Dense(l1), LayerSpec::Dense(l2)],
            Some(ConcatSpec {
                layer: 1,
                cs_width: 1,
            }),
            2,
        )
        .unwrap();
        partition(&model, 1).unwrap().0
    }

    fn offset_client(seed: u64, n_classes: usize) -> ClientHalf<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = DenseLayer::glorot(6 + n_classes, 9, Activation::Relu, &mut rng).unwrap();
        let l2 = DenseLayer::glorot(9, n_classes, Activation::Softmax, &mut rng).unwrap();
        let model = Model::new(
            vec![LayerSpec::Dense(l1), LayerSpec::Dense(l2)],
            Some(ConcatSpec {
                layer: 1,
                cs_width: n_classes,
            }),
            n_classes,
        )
        .unwrap();
        partition(&model, 1).unwrap().0
    }

    #[test]
    fn the_transport_carries_exactly_one_request_with_the_client_output() {
        let client = binary_client(1);
        let mode = SignalMode::Binary { cs_width: 1 };
        let d_in = [0.3, -0.2, 0.9, 0.0, -1.0, 0.5];
        let cs = 1;

        let encoded = encode_signal::<f64>(cs, mode).unwrap();
        let expected_vec = client.forward(&d_in, &encoded).unwrap().into_vec();
        let expected_bytes = encode_message(&WireMessage::InferRequest {
            vector: expected_vec,
        })
        .unwrap();

        let mut transport = ScriptedTransport::answering(&WireMessage::InferResponse {
            label: 0,
            n_classes: 2,
        });
        let label = client_infer_on(&client, &d_in, cs, mode, &mut transport).unwrap();

        // cs = 1 flips, so the true label is 1 on a received 0.
        assert_eq!(label, 1);
        // Byte identity with the one legal frame: the stream cannot carry
        // the raw pixels or the signal bit, because it is exactly this
        // request and nothing else.
        assert_eq!(transport.written, expected_bytes);
    }

    #[test]
    fn binary_recovery_is_applied_to_the_response() {
        let client = binary_client(2);
        let mode = SignalMode::Binary { cs_width: 1 };
        for (cs, label, expected) in [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)] {
            let mut transport = ScriptedTransport::answering(&WireMessage::InferResponse {
                label,
                n_classes: 2,
            });
            let got = client_infer_on(&client, &[0.1; 6], cs, mode, &mut transport).unwrap();
            assert_eq!(got, expected, "cs={cs} label={label}");
        }
    }

    #[test]
    fn offset_recovery_is_applied_to_the_response() {
        let n = 5;
        let client = offset_client(3, n);
        let mode = SignalMode::Offset { n_classes: n };
        for offset in 0..n as u32 {
            for label in 0..n as u16 {
                let mut transport = ScriptedTransport::answering(&WireMessage::InferResponse {
                    label,
                    n_classes: n as u16,
                });
                let got =
                    client_infer_on(&client, &[0.1; 6], offset, mode, &mut transport).unwrap();
                let expected = (u32::from(label) + n as u32 - offset) % n as u32;
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn remote_error_frames_surface_with_code_and_message() {
        let client = binary_client(4);
        let mut transport = ScriptedTransport::answering(&WireMessage::Error {
            code: 1,
            message: "expected 8 activations, got 3".into(),
        });
        let err = client_infer_on(
            &client,
            &[0.1; 6],
            0,
            SignalMode::Binary { cs_width: 1 },
            &mut transport,
        )
        .unwrap_err();
        match err {
            Error::Remote { code, message } => {
                assert_eq!(code, 1);
                assert!(message.contains("activations"));
            }
            other => panic!("expected remote error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_replies_are_transport_errors() {
        let client = binary_client(5);
        let full = encode_message(&WireMessage::InferResponse {
            label: 0,
            n_classes: 2,
        })
        .unwrap();
        for cut in [0, 4, HEADER_PREFIX, full.len() - 1] {
            let mut transport = ScriptedTransport::raw(full[..cut].to_vec());
            let err = client_infer_on(
                &client,
                &[0.1; 6],
                0,
                SignalMode::Binary { cs_width: 1 },
                &mut transport,
            )
            .unwrap_err();
            assert!(matches!(err, Error::Transport(_)), "cut={cut}, got {err:?}");
        }
    }

    const HEADER_PREFIX: usize = 6;

    #[test]
    fn class_count_disagreement_is_a_protocol_error() {
        let client = binary_client(6);
        let mut transport = ScriptedTransport::answering(&WireMessage::InferResponse {
            label: 0,
            n_classes: 3,
        });
        let err = client_infer_on(
            &client,
            &[0.1; 6],
            0,
            SignalMode::Binary { cs_width: 1 },
            &mut transport,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "got {err:?}");
    }

    #[test]
    fn out_of_range_labels_are_protocol_errors() {
        let client = binary_client(7);
        let mut transport = ScriptedTransport::answering(&WireMessage::InferResponse {
            label: 2,
            n_classes: 2,
        });
        let err = client_infer_on(
            &client,
            &[0.1; 6],
            0,
            SignalMode::Binary { cs_width: 1 },
            &mut transport,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "got {err:?}");
    }

    #[test]
    fn a_request_frame_in_response_position_is_a_protocol_error() {
        let client = binary_client(8);
        let mut transport = ScriptedTransport::answering(&WireMessage::InferRequest {
            vector: vec![1.0],
        });
        let err = client_infer_on(
            &client,
            &[0.1; 6],
            0,
            SignalMode::Binary { cs_width: 1 },
            &mut transport,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "got {err:?}");
    }

    #[test]
    fn signal_mode_must_match_the_model() {
        let client = binary_client(9);
        // Wrong encoded width for the reserved signal inputs.
        let err = client_infer_on(
            &client,
            &[0.1; 6],
            0,
            SignalMode::Offset { n_classes: 4 },
            &mut ScriptedTransport::raw(Vec::new()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err:?}");

        // Offset mode with matching width but wrong class count.
        let five = offset_client(10, 5);
        let err = client_infer_on(
            &five,
            &[0.1; 6],
            0,
            SignalMode::Offset { n_classes: 5 },
            &mut ScriptedTransport::answering(&WireMessage::InferResponse {
                label: 0,
                n_classes: 5,
            }),
        );
        assert!(err.is_ok());

        // Invalid signal values are rejected before anything is sent.
        let mut transport = ScriptedTransport::raw(Vec::new());
        let err = client_infer_on(
            &client,
            &[0.1; 6],
            2,
            SignalMode::Binary { cs_width: 1 },
            &mut transport,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err:?}");
        assert!(transport.written.is_empty());
    }

    #[test]
    fn input_width_is_validated_before_anything_is_sent() {
        let client = binary_client(11);
        let mut transport = ScriptedTransport::raw(Vec::new());
        let err = client_infer_on(
            &client,
            &[0.1; 4],
            0,
            SignalMode::Binary { cs_width: 1 },
            &mut transport,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "got {err:?}");
        assert!(transport.written.is_empty());
    }
}
