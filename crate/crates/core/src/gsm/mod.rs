//! AT-command GSM modem protocol: byte codec, an async command channel and
//! an in-process mock modem speaking the same protocol.

mod channel;
mod codec;
mod mock;

pub use channel::{open_device, AtChannel, SmsMessage};
pub use codec::{
    encode, validate_number, validate_text, AtCommand, AtEvent, AtParser, CommandDecoder, CTRL_Z,
};
pub use mock::{Direction, MockModem, ModemScript, Transcript, TranscriptEntry};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GsmError {
    #[error("invalid phone number {0:?}: expected '+' and 6-15 digits")]
    InvalidNumber(String),
    #[error("invalid SMS text: {0}")]
    InvalidText(String),
    #[error("timed out at step {step}")]
    Timeout { step: &'static str },
    #[error("modem reported an error at step {step}")]
    Protocol { step: &'static str },
    #[error("modem channel closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
