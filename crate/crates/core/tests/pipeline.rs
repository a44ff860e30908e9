use std::io::{Read, Write};
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

use splitwire::codec::quantize8;
use splitwire::latency::{total_delay, ChannelModel, ExecutionProfile, PayloadSizes, Strategy};
use splitwire::codec::Width;
use splitwire::pipeline::*;
use splitwire::tensor::Shape;
use splitwire::wire::{encode_message, read_message, MessageType, WireMessage};
use splitwire::Error;

fn prof() -> ExecutionProfile {
    ExecutionProfile {
        t_local: 2.25,
        t_edge_full: 0.0378,
        t_head: 0.0977,
        t_tail: 0.0398,
        t_filter_extra: 0.003,
    }
}

/// Same separation as the default, shifted so empty images sit at the
/// threshold's logit.
fn shifted_filter() -> FilterModel {
    FilterModel {
        empty: LatentScore {
            mean: -2.2,
            sigma: 1.0,
        },
        nonempty: LatentScore {
            mean: -2.2 + 1.977,
            sigma: 1.0,
        },
        ..FilterModel::default()
    }
}

fn small_images(n: usize, seed: u64) -> Vec<LabeledImage> {
    synthetic_images(&Shape::new([3, 8, 10]).unwrap(), n, &FilterModel::default(), seed).unwrap()
}

fn start_server(opts: ServerOptions) -> ServerHandle {
    Server::bind("127.0.0.1:0", prof(), opts).unwrap().spawn().unwrap()
}

#[test]
fn all_empty_stream_sends_nothing() {
    let fm = FilterModel {
        p_empty: 1.0,
        empty: LatentScore {
            mean: -30.0,
            sigma: 1.0,
        },
        ..FilterModel::default()
    };
    let images = synthetic_images(&Shape::new([2, 4, 4]).unwrap(), 100, &fm, 1).unwrap();
    let log = run_session(&images, &prof(), &ChannelModel::with_rate(5e6), &fm, &SessionMode::Simulated, 7).unwrap();
    assert_eq!(log.records.len(), 100);
    assert_eq!(log.total_bytes(), 0);
    for r in &log.records {
        assert!(r.filtered);
        assert_eq!(r.t_tail, 0.0);
        assert_eq!(r.total, prof().t_head + prof().t_filter_extra);
    }
}

#[test]
fn simulated_mean_matches_closed_form() {
    let images = small_images(400, 3);
    let ch = ChannelModel {
        fixed_latency_s: 0.004,
        downlink_s: 0.001,
        rate_bps: 2e6,
    };
    let fm = shifted_filter();
    let log = run_session(&images, &prof(), &ch, &fm, &SessionMode::Simulated, 11).unwrap();
    let frame_len = WireMessage::from_quantized(&quantize8(&images[0].tensor)).unwrap().encoded_len() as u64;
    let sizes = PayloadSizes {
        jpeg_bytes: 10_000,
        bottleneck_bytes_8: frame_len,
        bottleneck_bytes_16: 2 * frame_len,
        bottleneck_bytes_32: 4 * frame_len,
    };
    let p = log.drop_rate();
    assert!(p > 0.1 && p < 0.6, "drop rate {p}");
    let expected = total_delay(Strategy::SplitWithFilter, &prof(), &ch, &sizes, Width::W8, p).unwrap();
    assert!((log.mean_total() - expected.total).abs() < 1e-9);

    let kept: u64 = log.records.iter().filter(|r| !r.filtered).map(|_| frame_len).sum();
    assert_eq!(log.total_bytes(), kept);
}

#[test]
fn simulated_session_is_reproducible() {
    let images = small_images(50, 5);
    let ch = ChannelModel::with_rate(5e6);
    let csv = |seed| {
        let log = run_session(&images, &prof(), &ch, &FilterModel::default(), &SessionMode::Simulated, seed).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(csv(2), csv(2));
    assert_ne!(csv(2), csv(3));
    let text = String::from_utf8(csv(2)).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "image_id,filtered,bytes_sent,t_head,t_uplink,t_tail,total"
    );
}

#[test]
fn loopback_session_agrees_bit_exactly() {
    let server = start_server(ServerOptions::default());
    let images = small_images(30, 8);
    let mode = SessionMode::Socket {
        addr: server.addr().to_string(),
    };
    let log = run_session(&images, &prof(), &ChannelModel::with_rate(50e6), &FilterModel::default(), &mode, 4).unwrap();
    assert_eq!(log.records.len(), 30);
    let kept = log.records.iter().filter(|r| !r.filtered).count() as u64;
    assert!(kept > 0);
    assert_eq!(ServerStats::get(&server.stats().frames), kept);
    for r in log.records.iter().filter(|r| r.filtered) {
        assert_eq!(r.bytes_sent, 0);
        assert_eq!(r.t_tail, 0.0);
    }
    server.shutdown().unwrap();
}

#[test]
fn malformed_frame_closes_only_that_connection() {
    let server = start_server(ServerOptions::default());
    let mut bad = TcpStream::connect(server.addr()).unwrap();
    bad.write_all(b"XXXX\x01\x01\x00garbage-garbage-garbage").unwrap();
    let mut buf = [0u8; 16];
    bad.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    // server closes without replying
    assert_eq!(bad.read(&mut buf).unwrap_or(0), 0);

    let images = small_images(5, 1);
    let mode = SessionMode::Socket {
        addr: server.addr().to_string(),
    };
    run_session(&images, &prof(), &ChannelModel::with_rate(50e6), &FilterModel::default(), &mode, 1).unwrap();
    assert_eq!(ServerStats::get(&server.stats().protocol_errors), 1);
    server.shutdown().unwrap();
}

#[test]
fn unexpected_message_type_is_a_protocol_error() {
    let server = start_server(ServerOptions::default());
    let mut s = TcpStream::connect(server.addr()).unwrap();
    s.write_all(&encode_message(&WireMessage::empty_result()).unwrap()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    assert!(read_message(&mut s, 1 << 20).unwrap().is_none());
    drop(s);
    server.shutdown().unwrap();
}

#[test]
fn jpeg_frames_are_answered() {
    let server = start_server(ServerOptions::default());
    let mut s = TcpStream::connect(server.addr()).unwrap();
    let jpeg = WireMessage::bare(MessageType::JpegImage, vec![0xFF, 0xD8, 1, 2, 3]);
    s.write_all(&encode_message(&jpeg).unwrap()).unwrap();
    let reply = read_message(&mut s, 1 << 20).unwrap().unwrap();
    assert_eq!(reply, WireMessage::detection_result(checksum(&jpeg.payload)));
    drop(s);
    server.shutdown().unwrap();
}

#[test]
fn concurrent_clients_complete_independently() {
    let server = start_server(ServerOptions::default());
    let addr = server.addr().to_string();
    let workers: Vec<_> = (0..2u64)
        .map(|k| {
            let addr = addr.clone();
            thread::spawn(move || {
                let images = small_images(20, 100 + k);
                let mode = SessionMode::Socket { addr };
                run_session(&images, &prof(), &ChannelModel::with_rate(20e6), &FilterModel::default(), &mode, k).unwrap()
            })
        })
        .collect();
    let logs: Vec<SessionLog> = workers.into_iter().map(|w| w.join().unwrap()).collect();
    for log in &logs {
        assert_eq!(log.records.len(), 20);
        let ids: Vec<usize> = log.records.iter().map(|r| r.image_id).collect();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
    }
    let kept: usize = logs.iter().map(|l| l.records.iter().filter(|r| !r.filtered).count()).sum();
    assert_eq!(ServerStats::get(&server.stats().frames), kept as u64);
    assert!(ServerStats::get(&server.stats().connections) >= 2);
    server.shutdown().unwrap();
}

#[test]
fn idle_connection_is_closed() {
    let server = start_server(ServerOptions {
        idle_timeout_s: Some(0.1),
        ..ServerOptions::default()
    });
    let mut s = TcpStream::connect(server.addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut buf = [0u8; 1];
    assert_eq!(s.read(&mut buf).unwrap_or(0), 0);
    thread::sleep(Duration::from_millis(50));
    assert_eq!(ServerStats::get(&server.stats().idle_closes), 1);
    server.shutdown().unwrap();
}

#[test]
fn unreachable_server_is_a_transport_error() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mode = SessionMode::Socket {
        addr: format!("127.0.0.1:{port}"),
    };
    let err = run_session(&small_images(2, 0), &prof(), &ChannelModel::with_rate(1e6), &FilterModel::default(), &mode, 0).unwrap_err();
    assert!(matches!(err, Error::Transport { .. }), "{err}");
}

#[test]
fn paced_uplink_tracks_transfer_time() {
    let server = start_server(ServerOptions::default());
    let images = synthetic_images(&Shape::new([4, 50, 50]).unwrap(), 3, &FilterModel { threshold: 0.0, ..FilterModel::default() }, 2).unwrap();
    let mode = SessionMode::Socket {
        addr: server.addr().to_string(),
    };
    let ch = ChannelModel::with_rate(4e6);
    let log = run_session(&images, &prof(), &ch, &FilterModel { threshold: 0.0, ..FilterModel::default() }, &mode, 0).unwrap();
    for r in &log.records {
        let model = splitwire::latency::transfer_time(r.bytes_sent, &ch);
        assert!(r.t_uplink > 0.5 * model && r.t_uplink < 3.0 * model, "{} vs {model}", r.t_uplink);
    }
    server.shutdown().unwrap();
}
