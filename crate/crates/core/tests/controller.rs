use std::time::{Duration, SystemTime};

use serde_json::Value;
use tempfile::TempDir;
use vigil_core::controller::{
    is_valid_path, AlertChannel, CommandSource, LogEntry, PipelineState, Resolution,
    SurveillanceEvent, AUTHORITY_SMS, FIRE_SMS, INTRUDER_SMS,
};
use vigil_core::fisherface::Verdict;
use vigil_core::node_sim::NodeKind;
use vigil_core::testbed::{
    wait_until, CameraScene, StreamCollector, Testbed, TestbedOptions, FIRE_NODE, OWNER, PIR_NODE,
};

use PipelineState::*;

const WAIT: Duration = Duration::from_secs(10);

async fn testbed(options: TestbedOptions) -> (TempDir, Testbed) {
    let dir = tempfile::tempdir().unwrap();
    let bed = Testbed::start(dir.path(), options).await.unwrap();
    (dir, bed)
}

fn fast() -> TestbedOptions {
    TestbedOptions {
        poll_period_ms: 100,
        fps: 20.0,
        ..Default::default()
    }
}

async fn wait_state(bed: &Testbed, kind: NodeKind, state: PipelineState) -> SurveillanceEvent {
    let ok = wait_until(WAIT, || {
        bed.latest_event(kind).is_some_and(|e| e.state == state)
    })
    .await;
    let latest = bed.latest_event(kind);
    assert!(ok, "no {kind} event reached {state}: {latest:#?}");
    latest.unwrap()
}

async fn wait_finished(bed: &Testbed, kind: NodeKind) -> SurveillanceEvent {
    let ok = wait_until(WAIT, || {
        bed.latest_event(kind).is_some_and(|e| e.is_finished())
    })
    .await;
    assert!(
        ok,
        "{kind} event did not finish: {:#?}",
        bed.latest_event(kind)
    );
    bed.latest_event(kind).unwrap()
}

async fn intrude(bed: &Testbed) -> SurveillanceEvent {
    bed.fleet.get(PIR_NODE).unwrap().set_pir(1).unwrap();
    wait_state(bed, NodeKind::Pir, Active).await
}

async fn get_json(url: &str) -> (u16, Value) {
    let resp = reqwest::get(url).await.unwrap();
    let status = resp.status().as_u16();
    (
        status,
        serde_json::from_str(&resp.text().await.unwrap()).unwrap(),
    )
}

async fn post_command(bed: &Testbed, body: &str) -> (u16, Value) {
    let resp = reqwest::Client::new()
        .post(bed.api_url("/api/command"))
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    (
        status,
        serde_json::from_str(&resp.text().await.unwrap()).unwrap(),
    )
}

#[tokio::test(flavor = "multi_thread")]
async fn known_intruder_is_named_alerted_streamed_and_ceased_by_sms() {
    let (_d, bed) = testbed(fast()).await;
    let stream = StreamCollector::connect(&bed.stream_url()).await.unwrap();
    let ev = intrude(&bed).await;
    assert_eq!(
        ev.path(),
        vec![Idle, Triggered, Captured, Recognized, Alerted, Active]
    );
    assert!(bed.controller.snapshot().buzzer);

    // One alert email naming the person, carrying the stored capture.
    let mails = bed.smtp.messages();
    assert_eq!(mails.len(), 1);
    let mail = mails[0].parse();
    assert!(
        mail.text_body()
            .unwrap()
            .contains("'Alice' entered in your home"),
        "{mail:?}"
    );
    let att: Vec<_> = mail.attachments().collect();
    assert_eq!(att.len(), 1);
    assert_eq!(att[0].content_type, "image/jpeg");
    let capture = bed.storage_dir.join(&ev.event_id).join(&ev.captures[0]);
    assert_eq!(att[0].data, std::fs::read(&capture).unwrap());
    assert!(matches!(
        ev.verdict.as_ref().map(|v| &v.verdict),
        Some(Verdict::Known { label, .. }) if label == "Alice"
    ));

    // Call first, then the SMS, as a complete CMGS exchange.
    let t = bed.modem.transcript();
    let text = t.text();
    let dial = text.find(&format!("ATD{OWNER};")).expect("dialled owner");
    let cmgs = text
        .find(&format!("AT+CMGS=\"{OWNER}\""))
        .expect("sms header");
    assert!(dial < cmgs);
    assert!(
        text[cmgs..].contains(&format!("> {INTRUDER_SMS}\u{1a}")),
        "{text:?}"
    );
    assert_eq!(
        bed.modem.sent_sms(),
        vec![(OWNER.to_string(), INTRUDER_SMS.to_string())]
    );
    assert!(text.contains("+CMGS: "));

    assert!(wait_until(WAIT, || stream.count() >= 5).await);
    assert!(stream
        .content_types()
        .iter()
        .all(|c| c.as_deref() == Some("image/jpeg")));

    bed.inject_sms(None, "Found OK");
    let done = wait_finished(&bed, NodeKind::Pir).await;
    assert_eq!(
        done.path(),
        vec![Idle, Triggered, Captured, Recognized, Alerted, Active, Ceased, Idle]
    );
    assert_eq!(done.resolution, Some(Resolution::Ceased));
    assert_eq!(
        done.command_source,
        Some(CommandSource::Sms {
            sender: OWNER.into()
        })
    );
    assert!(!bed.controller.snapshot().buzzer);
    assert_eq!(
        bed.modem.sent_sms().len(),
        1,
        "no authority SMS on found ok"
    );

    // Recording mailed separately, then deleted.
    let rec = done.recording.clone().unwrap();
    assert!(rec.frames >= 5 && rec.deleted && !rec.truncated, "{rec:?}");
    assert!(!bed
        .storage_dir
        .join(&done.event_id)
        .join("recording.mjpeg")
        .exists());
    let mails = bed.smtp.messages();
    assert_eq!(mails.len(), 2);
    let video = mails[1].parse();
    let att: Vec<_> = video.attachments().collect();
    assert_eq!(att[0].content_type, "video/x-motion-jpeg");
    assert_eq!(att[0].data.len() as u64, rec.bytes);

    // Streaming stopped with the event.
    let published = bed.controller.frames_published();
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert_eq!(bed.controller.frames_published(), published);
    stream.close();
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn inform_authorities_texts_each_authority_and_escalates() {
    let (_d, bed) = testbed(fast()).await;
    intrude(&bed).await;
    bed.inject_sms(None, "inform authorities");
    let done = wait_finished(&bed, NodeKind::Pir).await;
    assert_eq!(done.resolution, Some(Resolution::Escalated));
    assert!(done.path().contains(&Escalated) && !done.path().contains(&Ceased));
    let sent = bed.modem.sent_sms();
    for n in &bed.options.authority_numbers {
        let hits = sent
            .iter()
            .filter(|(to, text)| to == n && text == AUTHORITY_SMS)
            .count();
        assert_eq!(hits, 1, "{n}: {sent:?}");
    }
    assert_eq!(sent.len(), 1 + bed.options.authority_numbers.len());
    assert_eq!(bed.modem.transcript().ctrl_z_count(), sent.len());
    let sms_alerts = done
        .alerts
        .iter()
        .filter(|a| a.channel == AlertChannel::Sms)
        .count();
    assert_eq!(sms_alerts, sent.len());
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn stranger_and_empty_frames_still_alert() {
    let (_d, bed) = testbed(TestbedOptions {
        camera: CameraScene::Unknown,
        ..fast()
    })
    .await;
    let ev = intrude(&bed).await;
    assert!(matches!(
        ev.verdict.as_ref().map(|v| &v.verdict),
        Some(Verdict::Unknown { .. })
    ));
    let body = bed.smtp.messages()[0].parse().text_body().unwrap();
    assert!(
        body.contains("unknown person") && body.contains("picture is attached"),
        "{body}"
    );
    bed.shutdown().await;

    let (_d, bed) = testbed(TestbedOptions {
        camera: CameraScene::Empty,
        ..fast()
    })
    .await;
    let ev = intrude(&bed).await;
    assert_eq!(ev.faces_detected, 0);
    assert!(ev.verdict.is_none());
    let mail = bed.smtp.messages()[0].parse();
    assert!(mail.text_body().unwrap().contains("no face was found"));
    assert_eq!(mail.attachments().count(), 1, "full frame attached");
    assert_eq!(bed.modem.sent_sms().len(), 1);
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn held_motion_yields_one_event_and_lockout_suppresses_rearm() {
    let (_d, bed) = testbed(fast()).await;
    let ev = intrude(&bed).await;
    let polls = |bed: &Testbed| bed.controller.snapshot().nodes[0].polls;
    let before = polls(&bed);
    assert!(wait_until(WAIT, || polls(&bed) >= before + 8).await);
    let pir = bed.fleet.get(PIR_NODE).unwrap();
    pir.set_pir(0).unwrap();
    tokio::time::sleep(Duration::from_millis(250)).await;
    pir.set_pir(1).unwrap();
    tokio::time::sleep(Duration::from_millis(400)).await;
    let events = bed.controller.events();
    assert_eq!(events.len(), 1, "{events:#?}");
    assert!(
        bed.controller.event(&ev.event_id).unwrap().notes.is_empty(),
        "lockout swallows the re-rise"
    );
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn motion_during_an_active_event_is_noted_not_a_new_event() {
    let (_d, bed) = testbed(TestbedOptions {
        rearm_lockout_ms: 0,
        ..fast()
    })
    .await;
    let ev = intrude(&bed).await;
    let pir = bed.fleet.get(PIR_NODE).unwrap();
    pir.set_pir(0).unwrap();
    tokio::time::sleep(Duration::from_millis(250)).await;
    pir.set_pir(1).unwrap();
    assert!(
        wait_until(WAIT, || !bed
            .controller
            .event(&ev.event_id)
            .unwrap()
            .notes
            .is_empty())
        .await
    );
    let notes = bed.controller.event(&ev.event_id).unwrap().notes;
    assert!(notes[0].text.contains("while event is active"), "{notes:?}");
    assert_eq!(bed.controller.events().len(), 1);
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn fire_alerts_by_phone_only() {
    let (_d, bed) = testbed(TestbedOptions {
        rearm_lockout_ms: 300,
        ..fast()
    })
    .await;
    let fire = bed.fleet.get(FIRE_NODE).unwrap();
    fire.set_temperature(60.0).unwrap();
    let payload = fire.payload();
    assert!(payload.contains("\"firevalue\":1"), "{payload}");
    let ev = wait_finished(&bed, NodeKind::Fire).await;
    assert_eq!(ev.path(), vec![Idle, Triggered, Alerted, Idle]);
    assert!(ev.resolution.is_none());

    // Held high: no second alert.
    tokio::time::sleep(Duration::from_millis(600)).await;
    let t = bed.modem.transcript();
    assert_eq!(t.count(&format!("ATD{OWNER};")), 1);
    assert_eq!(t.count("AT+CMGS="), 1);
    assert_eq!(
        bed.modem.sent_sms(),
        vec![(OWNER.to_string(), FIRE_SMS.to_string())]
    );
    assert!(bed.capture_files().is_empty());
    assert!(bed.smtp.messages().is_empty());
    assert_eq!(bed.controller.frames_published(), 0);
    assert!(!bed.controller.snapshot().buzzer);

    // Falls and rises again: alerts again.
    fire.set_temperature(25.0).unwrap();
    tokio::time::sleep(Duration::from_millis(300)).await;
    fire.set_temperature(70.0).unwrap();
    assert!(wait_until(WAIT, || bed.modem.sent_sms().len() == 2).await);
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn fire_during_an_intrusion_leaves_the_intrusion_alone() {
    let (_d, bed) = testbed(fast()).await;
    let intr = intrude(&bed).await;
    bed.fleet
        .get(FIRE_NODE)
        .unwrap()
        .set_temperature(80.0)
        .unwrap();
    let fire = wait_finished(&bed, NodeKind::Fire).await;
    assert_eq!(fire.path(), vec![Idle, Triggered, Alerted, Idle]);
    assert_eq!(bed.controller.event(&intr.event_id).unwrap().state, Active);
    assert_eq!(
        bed.controller.snapshot().active_event.as_deref(),
        Some(intr.event_id.as_str())
    );
    assert!(bed.modem.sent_sms().iter().any(|(_, t)| t == FIRE_SMS));
    bed.inject_sms(None, "Found OK");
    let done = wait_finished(&bed, NodeKind::Pir).await;
    assert_eq!(done.resolution, Some(Resolution::Ceased));
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn only_the_owner_can_resolve_and_only_with_known_words() {
    let (_d, bed) = testbed(fast()).await;
    let ev = intrude(&bed).await;
    bed.inject_sms(Some("+15559999999"), "Found OK");
    bed.inject_sms(None, "hello");
    assert!(
        wait_until(WAIT, || bed
            .controller
            .event(&ev.event_id)
            .unwrap()
            .notes
            .len()
            == 2)
        .await
    );
    let now = bed.controller.event(&ev.event_id).unwrap();
    assert_eq!(now.state, Active);
    assert!(now.notes[0].text.contains("non-owner"));
    assert!(now.notes[1].text.contains("hello"));
    bed.inject_sms(None, "  fOuNd Ok \r\n");
    assert_eq!(
        wait_finished(&bed, NodeKind::Pir).await.resolution,
        Some(Resolution::Ceased)
    );
    bed.shutdown().await;
}

/// Event record with run-dependent values blanked.
fn normalised(ev: &SurveillanceEvent) -> Value {
    fn walk(v: &mut Value) {
        match v {
            Value::Object(m) => {
                for (k, x) in m.iter_mut() {
                    match k.as_str() {
                        "at_ms" | "event_id" | "frames" | "bytes" | "retained_until_ms" => {
                            *x = Value::Null
                        }
                        "detail" => {
                            *x = Value::String(
                                x.as_str()
                                    .unwrap_or_default()
                                    .split(" (")
                                    .next()
                                    .unwrap()
                                    .into(),
                            )
                        }
                        _ => walk(x),
                    }
                }
            }
            Value::Array(a) => a.iter_mut().for_each(walk),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(ev).unwrap();
    v.as_object_mut().unwrap().remove("command_source");
    walk(&mut v);
    v
}

#[tokio::test(flavor = "multi_thread")]
async fn sms_and_api_commands_leave_the_same_record() {
    let opts = TestbedOptions {
        frames: 1,
        ..fast()
    };
    let (_a, by_sms) = testbed(opts.clone()).await;
    let (_b, by_api) = testbed(opts).await;
    intrude(&by_sms).await;
    intrude(&by_api).await;
    by_sms.inject_sms(None, "Found OK");
    let (status, body) = post_command(&by_api, r#"{"action":"found_ok"}"#).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["state"], "IDLE");
    let a = wait_finished(&by_sms, NodeKind::Pir).await;
    let b = wait_finished(&by_api, NodeKind::Pir).await;
    assert_eq!(b.command_source, Some(CommandSource::Api));
    assert_eq!(normalised(&a), normalised(&b));
    by_sms.shutdown().await;
    by_api.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_recording_email_keeps_the_file_until_retention_expires() {
    let (_d, bed) = testbed(TestbedOptions {
        email_failing: true,
        retention_s: 600,
        ..fast()
    })
    .await;
    let ev = intrude(&bed).await;
    assert!(
        !ev.alerts
            .iter()
            .find(|a| a.channel == AlertChannel::Email)
            .unwrap()
            .ok
    );
    assert_eq!(ev.state, Active, "email failure does not stop the pipeline");
    bed.inject_sms(None, "Found OK");
    let done = wait_finished(&bed, NodeKind::Pir).await;
    let rec = done.recording.clone().unwrap();
    let file = bed.storage_dir.join(&done.event_id).join("recording.mjpeg");
    assert!(file.is_file() && !rec.deleted);
    let until = rec.retained_until_ms.expect("retention stamped");
    let now = SystemTime::now();
    assert!(bed
        .controller
        .sweep_at(now + Duration::from_secs(590))
        .unwrap()
        .is_empty());
    assert!(file.is_file());
    assert_eq!(
        bed.controller
            .sweep_at(now + Duration::from_secs(601))
            .unwrap(),
        vec![done.event_id.clone()]
    );
    assert!(!file.exists());
    assert!(until >= vigil_core::controller::to_ms(now) + 599_000);
    assert!(
        bed.controller
            .event(&done.event_id)
            .unwrap()
            .recording
            .unwrap()
            .deleted
    );
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn dashboard_api_contract() {
    let (_d, bed) = testbed(fast()).await;
    assert!(
        wait_until(WAIT, || bed
            .controller
            .snapshot()
            .nodes
            .iter()
            .all(|n| n.polls > 0))
        .await
    );
    let (status, nodes) = get_json(&bed.api_url("/api/nodes")).await;
    assert_eq!(status, 200);
    let nodes = nodes.as_array().unwrap();
    assert_eq!(nodes.len(), 2);
    let node = |id: &str| nodes.iter().find(|n| n["node_id"] == id).unwrap();
    assert_eq!(node(PIR_NODE)["kind"], "PIR");
    assert_eq!(node(PIR_NODE)["status"]["value"], 0);
    assert_eq!(node(FIRE_NODE)["kind"], "FIRE");
    assert_eq!(node(FIRE_NODE)["status"]["connected"], true);

    let (status, body) = post_command(&bed, r#"{"action":"found_ok"}"#).await;
    assert_eq!(
        (status, body["error"].as_str(), body["state"].as_str()),
        (409, Some("not_active"), Some("IDLE"))
    );
    let (status, body) = post_command(&bed, r#"{"action":"reboot"}"#).await;
    assert_eq!(
        (status, body["error"].as_str()),
        (400, Some("unknown_action"))
    );
    let (status, _) = post_command(&bed, "not json").await;
    assert_eq!(status, 400);

    bed.fleet
        .get(FIRE_NODE)
        .unwrap()
        .set_temperature(90.0)
        .unwrap();
    wait_finished(&bed, NodeKind::Fire).await;
    let ev = intrude(&bed).await;
    let (_, events) = get_json(&bed.api_url("/api/events")).await;
    let events = events.as_array().unwrap();
    assert_eq!(events.len(), 2);
    assert_eq!(events[0]["event_id"], ev.event_id.as_str(), "newest first");
    assert_eq!(events[0]["state"], "ACTIVE");
    assert_eq!(events[1]["trigger"]["kind"], "FIRE");

    let resp = reqwest::get(bed.api_url(&format!("/api/events/{}/capture", ev.event_id)))
        .await
        .unwrap();
    assert_eq!(resp.headers()["content-type"], "image/jpeg");
    let bytes = resp.bytes().await.unwrap();
    assert_eq!(
        bytes.as_ref(),
        std::fs::read(bed.storage_dir.join(&ev.event_id).join("capture-1.jpg")).unwrap()
    );
    let fire_id = events[1]["event_id"].as_str().unwrap();
    let (status, _) = get_json(&bed.api_url(&format!("/api/events/{fire_id}/capture"))).await;
    assert_eq!(status, 404);
    let (status, _) = get_json(&bed.api_url("/api/events/nope")).await;
    assert_eq!(status, 404);
    let (_, state) = get_json(&bed.api_url("/api/state")).await;
    assert_eq!(
        (state["state"].as_str(), state["buzzer"].as_bool()),
        (Some("ACTIVE"), Some(true))
    );

    // The API port also carries the stream.
    let s = StreamCollector::connect(&bed.api_url("/stream"))
        .await
        .unwrap();
    assert!(wait_until(WAIT, || s.count() >= 2).await);
    s.close();

    let (status, body) = post_command(&bed, r#"{"action":"inform_authorities"}"#).await;
    assert_eq!(status, 200);
    assert_eq!(body["resolution"], "ESCALATED");
    assert_eq!(body["command_source"]["via"], "api");
    let (status, body) = post_command(&bed, r#"{"action":"found_ok"}"#).await;
    assert_eq!((status, body["state"].as_str()), (409, Some("IDLE")));
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_stream_clients_see_identical_frames() {
    let (_d, bed) = testbed(fast()).await;
    let a = StreamCollector::connect(&bed.stream_url()).await.unwrap();
    let b = StreamCollector::connect(&bed.stream_url()).await.unwrap();
    let idle = StreamCollector::connect(&bed.stream_url()).await.unwrap();
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert_eq!(idle.count(), 0, "idle controller streams nothing");
    intrude(&bed).await;
    assert!(wait_until(WAIT, || a.count() >= 8 && b.count() >= 8).await);
    idle.close();
    bed.inject_sms(None, "Found OK");
    wait_finished(&bed, NodeKind::Pir).await;
    let total = bed.controller.frames_published() as usize;
    assert!(wait_until(WAIT, || a.count() == total && b.count() == total).await);
    assert_eq!(a.parts(), b.parts());
    a.close();
    b.close();
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn event_logs_replay_to_machine_paths() {
    let (_d, bed) = testbed(fast()).await;
    bed.fleet
        .get(FIRE_NODE)
        .unwrap()
        .set_temperature(75.0)
        .unwrap();
    wait_finished(&bed, NodeKind::Fire).await;
    intrude(&bed).await;
    bed.inject_sms(None, "Inform Authorities");
    wait_finished(&bed, NodeKind::Pir).await;
    for ev in bed.controller.events() {
        let log = bed.controller.storage().read_log(&ev.event_id).unwrap();
        let mut states = vec![Idle];
        states.extend(log.iter().filter_map(|e| match e {
            LogEntry::Transition(t) => Some(t.to),
            _ => None,
        }));
        assert!(is_valid_path(ev.kind(), &states), "{states:?}");
        assert_eq!(states, ev.path());
        let alerts = log
            .iter()
            .filter(|e| matches!(e, LogEntry::Alert(_)))
            .count();
        assert_eq!(alerts, ev.alerts.len());
    }
    bed.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_nodes_do_not_stall_the_others() {
    let blackhole = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let hole = blackhole.local_addr().unwrap();
    let _keep = tokio::spawn(async move {
        let mut held = Vec::new();
        while let Ok((s, _)) = blackhole.accept().await {
            held.push(s);
        }
    });
    let opts = TestbedOptions {
        extra_nodes: vec![vigil_core::controller::NodeEndpoint {
            id: "silent".into(),
            kind: NodeKind::Pir,
            url: format!("http://{hole}/status"),
        }],
        ..fast()
    };
    let (_d, mut bed) = testbed(opts).await;
    bed.fleet.get_mut(PIR_NODE).unwrap().stop().await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    let view = |bed: &Testbed, id: &str| {
        let snap = bed.controller.snapshot();
        snap.nodes.into_iter().find(|n| n.node_id == id).unwrap()
    };
    let fire0 = view(&bed, FIRE_NODE).polls;
    tokio::time::sleep(Duration::from_millis(1000)).await;
    let fire_polls = view(&bed, FIRE_NODE).polls - fire0;
    assert!(
        fire_polls >= 8,
        "fire node polled {fire_polls} times in 1 s"
    );
    let pir = view(&bed, PIR_NODE);
    assert!(!pir.reachable && pir.error.is_some());
    let silent = view(&bed, "silent");
    assert!(!silent.reachable);
    assert!(silent.polls >= 4, "timeouts are bounded by the period");
    bed.fleet
        .get(FIRE_NODE)
        .unwrap()
        .set_temperature(55.0)
        .unwrap();
    wait_finished(&bed, NodeKind::Fire).await;
    bed.shutdown().await;
}
