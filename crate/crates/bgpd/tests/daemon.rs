// SPDX-License-Identifier: Apache-2.0

use std::net::Ipv4Addr;
use std::sync::Arc;
use std::time::Duration;

use netorch_bgpd::wire::Message;
use netorch_bgpd::{BgpError, BgpEvent, Daemon, DaemonConfig, EventSink, Origin, PeerState, Prefix, Speaker};
use parking_lot::Mutex;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

fn daemon(id: &str, asn: u32, last: u8) -> (Daemon, Arc<Mutex<Vec<BgpEvent>>>) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink_log = log.clone();
    let sink: EventSink = Arc::new(move |e| sink_log.lock().push(e));
    let cfg = DaemonConfig {
        hold_time: Duration::from_secs(90),
        open_timeout: Duration::from_millis(500),
    };
    let d = Daemon::new(Speaker::new(id, asn, Ipv4Addr::new(10, 0, 0, last)), cfg, Some(sink));
    (d, log)
}

async fn eventually(mut f: impl FnMut() -> bool) {
    for _ in 0..200 {
        if f() {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("condition not reached in 2s");
}

fn pfx(s: &str) -> Prefix {
    s.parse().unwrap()
}

#[tokio::test]
async fn two_speakers_establish_and_exchange_routes() {
    let (a, a_log) = daemon("a", 65001, 1);
    let (b, _) = daemon("b", 65002, 2);
    let addr = b.listen("127.0.0.1:0".parse().unwrap()).await.unwrap();
    a.announce(pfx("10.1.0.0/24"), Origin::Igp);
    let st = a.open_session(&addr.to_string(), 65002).await.unwrap();
    assert_eq!(st.state, PeerState::Established);
    assert_eq!(st.peer, "b");
    eventually(|| b.peers().iter().any(|p| p.peer == "a" && p.state == PeerState::Established)).await;
    eventually(|| b.rib().loc_rib.len() == 1).await;
    let r = &b.rib().loc_rib[0];
    assert_eq!(r.as_path, vec![65001]);
    assert_eq!(r.next_hop, Ipv4Addr::new(10, 0, 0, 1));

    b.announce(pfx("10.2.0.0/24"), Origin::Igp);
    eventually(|| a.rib().loc_rib.len() == 2).await;
    b.withdraw(pfx("10.2.0.0/24"));
    eventually(|| a.rib().loc_rib.len() == 1).await;
    assert!(a_log.lock().iter().any(|e| matches!(e, BgpEvent::SessionUp { peer, .. } if peer == "b")));

    a.close_session("b", "admin down").unwrap();
    eventually(|| b.rib().loc_rib.is_empty()).await;
    eventually(|| a.peers().iter().all(|p| p.state == PeerState::Idle)).await;
}

#[tokio::test]
async fn asn_mismatch_leaves_peer_idle() {
    let (a, log) = daemon("a", 65001, 1);
    let (b, _) = daemon("b", 65003, 2);
    let addr = b.listen("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let err = a.open_session(&addr.to_string(), 65002).await.unwrap_err();
    assert_eq!(err, BgpError::AsnMismatch { expected: 65002, announced: 65003 });
    let peers = a.peers();
    assert_eq!(peers.len(), 1);
    assert_eq!(peers[0].state, PeerState::Idle);
    assert!(log.lock().iter().any(BgpEvent::is_error));
}

#[tokio::test]
async fn no_listener_is_open_timeout() {
    let (a, _) = daemon("a", 65001, 1);
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").await.unwrap();
        l.local_addr().unwrap().port()
    };
    let err = a.open_session(&format!("127.0.0.1:{port}"), 65002).await.unwrap_err();
    assert!(matches!(err, BgpError::OpenTimeout(_)));

    // A listener that never speaks times out too.
    let silent = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = silent.local_addr().unwrap();
    let _hold = tokio::spawn(async move {
        let (s, _) = silent.accept().await.unwrap();
        tokio::time::sleep(Duration::from_secs(5)).await;
        drop(s);
    });
    let err = a.open_session(&addr.to_string(), 65002).await.unwrap_err();
    assert!(matches!(err, BgpError::OpenTimeout(_)));
}

async fn raw_peer(addr: std::net::SocketAddr, asn: u32, hold: u64) -> (BufReader<tokio::net::tcp::OwnedReadHalf>, tokio::net::tcp::OwnedWriteHalf) {
    let s = TcpStream::connect(addr).await.unwrap();
    let (r, mut w) = s.into_split();
    let open = Message::Open { asn, id: "raw".into(), hold_time: hold, next_hop: Ipv4Addr::new(10, 9, 9, 9) };
    w.write_all(open.encode().as_bytes()).await.unwrap();
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line).await.unwrap();
    assert!(matches!(Message::decode(&line).unwrap(), Message::Open { .. }));
    (r, w)
}

#[tokio::test]
async fn hold_expiry_flushes_peer_routes() {
    let (d, log) = daemon("d", 65001, 1);
    let addr = d.listen("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let (mut r, mut w) = raw_peer(addr, 65009, 1).await;
    let upd = Message::Update {
        announce: vec![netorch_bgpd::wire::Advert {
            prefix: pfx("10.8.0.0/16"),
            next_hop: Ipv4Addr::new(10, 9, 9, 9),
            as_path: vec![65009],
            origin: Origin::Igp,
        }],
    };
    w.write_all(upd.encode().as_bytes()).await.unwrap();
    eventually(|| d.rib().loc_rib.len() == 1).await;
    assert_eq!(d.peers()[0].hold_time, Some(1.0));

    // Keepalives arrive at a third of the hold time; then we go silent.
    let mut line = String::new();
    let t0 = tokio::time::Instant::now();
    r.read_line(&mut line).await.unwrap();
    assert_eq!(Message::decode(&line).unwrap(), Message::Keepalive);
    assert!(t0.elapsed() < Duration::from_millis(900));

    eventually(|| d.rib().loc_rib.is_empty()).await;
    assert_eq!(d.peers()[0].state, PeerState::Idle);
    assert!(log.lock().iter().any(|e| matches!(e, BgpEvent::SessionDown { reason, .. } if reason == "hold timer expired")));
}

#[tokio::test]
async fn malformed_message_resets_session() {
    let (d, log) = daemon("d", 65001, 1);
    let addr = d.listen("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let (mut r, mut w) = raw_peer(addr, 65009, 90).await;
    let good = Message::Update {
        announce: vec![netorch_bgpd::wire::Advert {
            prefix: pfx("10.8.0.0/16"),
            next_hop: Ipv4Addr::new(10, 9, 9, 9),
            as_path: vec![65009],
            origin: Origin::Igp,
        }],
    };
    w.write_all(good.encode().as_bytes()).await.unwrap();
    eventually(|| d.rib().adj_rib_in.len() == 1).await;
    w.write_all(b"{\"type\":\"update\",\"announce\":[{\"prefix\":\"10.0.0.0/33\"}]}\n").await.unwrap();
    let mut line = String::new();
    r.read_line(&mut line).await.unwrap();
    assert!(matches!(Message::decode(&line).unwrap(), Message::Notification { .. }));
    eventually(|| d.rib().adj_rib_in.is_empty()).await;
    assert_eq!(d.peers()[0].state, PeerState::Idle);
    assert!(log.lock().iter().any(|e| matches!(e, BgpEvent::MalformedUpdate { .. })));
}

#[tokio::test]
async fn looped_route_from_wire_rejected_with_event() {
    let (d, log) = daemon("d", 65001, 1);
    let addr = d.listen("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let (_r, mut w) = raw_peer(addr, 65009, 90).await;
    let looped = Message::Update {
        announce: vec![netorch_bgpd::wire::Advert {
            prefix: pfx("10.8.0.0/16"),
            next_hop: Ipv4Addr::new(10, 9, 9, 9),
            as_path: vec![65009, 65001],
            origin: Origin::Igp,
        }],
    };
    w.write_all(looped.encode().as_bytes()).await.unwrap();
    eventually(|| log.lock().iter().any(|e| matches!(e, BgpEvent::RouteRejected { .. }))).await;
    assert!(d.rib().loc_rib.is_empty());
    assert_eq!(d.peers()[0].state, PeerState::Established);
}
