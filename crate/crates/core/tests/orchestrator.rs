// SPDX-License-Identifier: Apache-2.0

use std::time::Duration;

use netorch_bgpd::{Origin, PeerState, Prefix};
use netorch_core::config::{ConfigDocument, ConfigPath, Scalar};
use netorch_core::devsim::SpawnOptions;
use netorch_core::events::Category;
use netorch_core::inventory::{DeviceDescriptor, Platform};
use netorch_core::orchestrator::{Orchestrator, OrchestratorConfig, TaskState};
use netorch_core::provisioner::SimTiming;
use netorch_core::reconciler::{Mode, TargetSpec, TaskDocument};

async fn orchestrator() -> std::sync::Arc<Orchestrator> {
    Orchestrator::start(OrchestratorConfig {
        timing: SimTiming::instant(),
        ..Default::default()
    })
    .await
    .unwrap()
}

async fn device(o: &Orchestrator, name: &str, platform: Platform, dialect: &str, asn: Option<u32>) -> String {
    let endpoint = o.fleet.spawn(SpawnOptions::new(dialect)).await.unwrap();
    o.register_device(DeviceDescriptor {
        name: name.into(),
        platform,
        dialect_id: dialect.into(),
        mgmt_endpoint: endpoint,
        credential_ref: None,
        asn,
    })
    .await
    .unwrap()
    .id
}

async fn eventually(mut f: impl FnMut() -> bool) {
    for _ in 0..300 {
        if f() {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("condition not reached");
}

#[tokio::test]
async fn overlay_speaker_peers_with_every_router() {
    let o = orchestrator().await;
    device(&o, "cn1", Platform::CloudNode, "ovsish", Some(64512)).await;
    device(&o, "r1", Platform::TraditionalRouter, "ciscoish", Some(65001)).await;
    device(&o, "r2", Platform::TraditionalRouter, "junosish", Some(65002)).await;
    device(&o, "sw1", Platform::SdnSwitch, "ovsish", None).await;

    let speakers = o.fabric.list();
    assert_eq!(speakers.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), ["cn1", "r1", "r2"]);
    eventually(|| o.fabric.established_sessions() == 4).await;
    let cn1 = &o.fabric.list()[0];
    assert!(cn1.peers.iter().all(|p| p.state == PeerState::Established));

    let pfx: Prefix = "172.16.1.0/24".parse().unwrap();
    o.fabric.announce("cn1", pfx, Origin::Igp).unwrap();
    for r in ["r1", "r2"] {
        eventually(|| o.fabric.rib(r).unwrap().loc_rib.iter().any(|x| x.prefix == pfx)).await;
        let rib = o.fabric.rib(r).unwrap();
        assert_eq!(rib.loc_rib[0].as_path, vec![64512]);
    }
    // Routes from one router reach the other through the overlay node.
    let under: Prefix = "192.168.0.0/16".parse().unwrap();
    o.fabric.announce("r1", under, Origin::Igp).unwrap();
    eventually(|| o.fabric.rib("r2").unwrap().loc_rib.iter().any(|x| x.prefix == under)).await;
    let r = o.fabric.rib("r2").unwrap().loc_rib.into_iter().find(|x| x.prefix == under).unwrap();
    assert_eq!(r.as_path, vec![64512, 65001]);

    assert!(o.events.all().iter().any(|e| e.category == Category::Bgp && e.kind() == "bgp.session-up"));
    assert!(o.fabric.rib("nope").is_err());
    o.shutdown();
}

#[tokio::test]
async fn tasks_run_in_background_and_record_reports() {
    let o = orchestrator().await;
    device(&o, "sw1", Platform::SdnSwitch, "ovsish", None).await;
    device(&o, "sw2", Platform::SdnSwitch, "ovsish", None).await;
    let mut desired = ConfigDocument::new();
    desired
        .set(ConfigPath::new(["bridges", "br0", "stp"]).unwrap(), Scalar::Bool(true))
        .unwrap();
    let doc = TaskDocument {
        targets: vec![TargetSpec::Platform { platform: Platform::SdnSwitch }],
        desired,
        mode: Mode::Merge,
    };
    let first = o.run_task(doc.clone()).await.unwrap();
    assert_eq!(first.state, TaskState::Completed);
    assert_eq!(first.reports.len(), 2);
    assert!(first.reports.iter().all(|r| r.commands_sent > 0));
    let second = o.run_task(doc).await.unwrap();
    assert!(second.reports.iter().all(|r| r.commands_sent == 0));
    assert_eq!(o.tasks().len(), 2);
    assert_eq!(o.task(&first.id).unwrap(), first);
    assert!(o.task("task-99").is_none());
    let m = o.metrics();
    assert_eq!(m.tasks["completed"], 2);
    assert_eq!(m.devices, 2);

    let bad = TaskDocument {
        targets: vec![TargetSpec::Name("ghost".into())],
        desired: ConfigDocument::new(),
        mode: Mode::Merge,
    };
    assert!(o.submit_task(bad).is_err());
    assert_eq!(o.tasks().len(), 2);
}
