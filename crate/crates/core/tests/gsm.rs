use std::time::Duration;

use proptest::prelude::*;
use vigil_core::gsm::{
    encode, AtChannel, AtCommand, AtEvent, AtParser, CommandDecoder, Direction, GsmError,
    MockModem, ModemScript,
};

const OWNER: &str = "+918547616766";
const T: Duration = Duration::from_secs(2);

fn channel(
    script: ModemScript,
) -> (
    MockModem,
    AtChannel,
    tokio::sync::mpsc::UnboundedReceiver<u32>,
) {
    let (modem, stream) = MockModem::spawn(script);
    let (ch, notices) = AtChannel::new(stream);
    (modem, ch, notices)
}

#[tokio::test]
async fn sms_exchange_with_auto_ok_modem() {
    let (modem, mut ch, _n) = channel(ModemScript {
        next_ref: 4,
        ..Default::default()
    });
    ch.set_text_mode(T).await.unwrap();
    assert_eq!(
        ch.send_sms(OWNER, "Intruder Detected!!", T).await.unwrap(),
        4
    );
    assert_eq!(ch.send_sms(OWNER, "again", T).await.unwrap(), 5);
    let t = modem.transcript();
    assert!(t.contains("AT+CMGS=\"+918547616766\"\r"));
    assert!(t.contains("Intruder Detected!!\u{1a}"));
    assert!(t.contains("+CMGS: 4"));
    assert_eq!(t.ctrl_z_count(), 2);
    assert_eq!(
        modem.sent_sms()[0],
        (OWNER.to_string(), "Intruder Detected!!".to_string())
    );
}

#[tokio::test]
async fn body_is_written_only_after_prompt() {
    let (modem, mut ch, _n) = channel(ModemScript::default());
    ch.send_sms(OWNER, "hello", T).await.unwrap();
    let entries = modem.transcript().entries;
    let prompt = entries
        .iter()
        .position(|e| e.direction == Direction::FromModem && e.bytes.ends_with(b"> "))
        .unwrap();
    let body = entries
        .iter()
        .position(|e| e.direction == Direction::ToModem && e.bytes.contains(&0x1A))
        .unwrap();
    assert!(prompt < body);
}

#[tokio::test]
async fn header_error_stops_before_body() {
    let (modem, mut ch, _n) = channel(ModemScript {
        fail_sms_header: true,
        ..Default::default()
    });
    let err = ch.send_sms(OWNER, "secret body", T).await.unwrap_err();
    assert!(
        matches!(
            err,
            GsmError::Protocol {
                step: "await-prompt"
            }
        ),
        "{err}"
    );
    let t = modem.transcript();
    assert!(!t.contains("secret body"));
    assert_eq!(t.ctrl_z_count(), 0);
}

#[tokio::test]
async fn silent_modem_times_out_at_named_step() {
    let (_modem, mut ch, _n) = channel(ModemScript {
        auto_ok: false,
        ..Default::default()
    });
    let short = Duration::from_millis(100);
    match ch.send_sms(OWNER, "x", short).await {
        Err(GsmError::Timeout { step }) => assert_eq!(step, "await-prompt"),
        other => panic!("{other:?}"),
    }
    match ch.dial(OWNER, short).await {
        Err(GsmError::Timeout { step }) => assert_eq!(step, "await-ok"),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn dial_validates_before_writing() {
    let (modem, mut ch, _n) = channel(ModemScript::default());
    ch.dial(OWNER, T).await.unwrap();
    assert!(modem.transcript().contains("ATD+918547616766;\r"));
    assert!(matches!(
        ch.dial("12345", T).await,
        Err(GsmError::InvalidNumber(_))
    ));
    assert_eq!(modem.dialed(), vec![OWNER.to_string()]);
}

#[tokio::test]
async fn inbound_sms_notice_and_read() {
    let (modem, mut ch, mut notices) = channel(ModemScript::default());
    for text in ["Found OK", "Inform Authorities"] {
        modem.inject_sms(OWNER, text);
        let index = tokio::time::timeout(T, notices.recv())
            .await
            .unwrap()
            .unwrap();
        let msg = ch.read_sms(index, T).await.unwrap();
        assert_eq!((msg.sender.as_str(), msg.text.as_str()), (OWNER, text));
    }
    let t = modem.transcript();
    assert!(t.contains("+CMTI: \"SM\",1"));
    assert!(t.contains("+CMTI: \"SM\",2"));
}

#[tokio::test]
async fn notice_during_exchange_is_routed_aside() {
    let (modem, mut ch, mut notices) = channel(ModemScript::default());
    modem.inject_sms(OWNER, "Found OK");
    ch.send_sms(OWNER, "x", T).await.unwrap();
    ch.dial(OWNER, T).await.unwrap();
    assert_eq!(
        tokio::time::timeout(T, notices.recv()).await.unwrap(),
        Some(1)
    );
}

#[tokio::test]
async fn idle_modem_sends_nothing_unsolicited() {
    let (modem, mut ch, _n) = channel(ModemScript::default());
    ch.set_text_mode(T).await.unwrap();
    tokio::time::sleep(Duration::from_millis(50)).await;
    let from: Vec<u8> = modem.transcript().bytes(Direction::FromModem);
    assert_eq!(from, b"\r\nOK\r\n");
}

fn recorded_stream() -> Vec<u8> {
    b"\r\nOK\r\n\r\n> \r\n+CMGS: 17\r\n\r\nOK\r\n\r\n+CMTI: \"SM\",3\r\n\
\r\n+CMGR: \"REC UNREAD\",\"+918547616766\",,\"26/10/16,12:00:00+00\"\r\nFound OK\r\n\r\nOK\r\n\
\r\nERROR\r\nNO CARRIER\r\n\r\n+CMS ERROR: 500\r\n> "
        .to_vec()
}

#[test]
fn recorded_stream_events() {
    let ev = AtParser::new().feed(&recorded_stream());
    assert_eq!(
        ev,
        vec![
            AtEvent::Ok,
            AtEvent::Prompt,
            AtEvent::SmsSent { reference: 17 },
            AtEvent::Ok,
            AtEvent::IncomingSmsNotice { index: 3 },
            AtEvent::SmsContent {
                sender: "+918547616766".into(),
                text: "Found OK".into()
            },
            AtEvent::Ok,
            AtEvent::Error,
            AtEvent::Line {
                raw: "NO CARRIER".into()
            },
            AtEvent::Error,
            AtEvent::Prompt,
        ]
    );
}

fn arb_number() -> impl Strategy<Value = String> {
    "[0-9]{6,15}".prop_map(|d| format!("+{d}"))
}

fn arb_command_group() -> impl Strategy<Value = Vec<AtCommand>> {
    prop_oneof![
        arb_number().prop_map(|number| vec![AtCommand::Dial { number }]),
        (arb_number(), "[ -~\r\n]{0,40}").prop_map(|(number, text)| vec![
            AtCommand::SmsSendHeader { number },
            AtCommand::SmsBody { text }
        ]),
        Just(vec![AtCommand::SetTextMode]),
        (0u32..1000).prop_map(|index| vec![AtCommand::ReadSms { index }]),
        "AT\\+C[A-Z]{2,4}\\?".prop_map(|s| vec![AtCommand::Raw {
            bytes: format!("{s}\r").into_bytes()
        }]),
    ]
}

proptest! {
    #[test]
    fn chunked_parse_equals_whole_parse(cuts in proptest::collection::vec(any::<prop::sample::Index>(), 0..20)) {
        let stream = recorded_stream();
        let whole = AtParser::new().feed(&stream);
        let mut points: Vec<usize> = cuts.iter().map(|i| i.index(stream.len() + 1)).collect();
        points.sort();
        let mut parser = AtParser::new();
        let mut got = Vec::new();
        let mut start = 0;
        for p in points.into_iter().chain([stream.len()]) {
            got.extend(parser.feed(&stream[start..p]));
            start = p;
        }
        prop_assert_eq!(got, whole);
    }

    #[test]
    fn decoder_inverts_encoder(groups in proptest::collection::vec(arb_command_group(), 0..8), split in any::<prop::sample::Index>()) {
        let cmds: Vec<AtCommand> = groups.into_iter().flatten().collect();
        let bytes: Vec<u8> = cmds.iter().flat_map(|c| encode(c).unwrap()).collect();
        let cut = split.index(bytes.len() + 1);
        let mut dec = CommandDecoder::new();
        let mut got = dec.feed(&bytes[..cut]);
        got.extend(dec.feed(&bytes[cut..]));
        prop_assert_eq!(got, cmds);
    }
}
