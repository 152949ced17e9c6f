//! Gesture taxonomy: the no-operation state, six static poses, five touch
//! (dynamic) gestures and four indirect same-side-hand gestures.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureClass {
    Normal,
    WristUp,
    CoverScreen,
    BlockLeft,
    CloseToMouth,
    HandInPocket,
    PhoneCoverWatch,
    ClickMic,
    ClickMicAdd,
    ClickSpeaker,
    PinchSides,
    PinchDiag,
    Pinch,
    RotateIn,
    RotateOut,
    Bend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureKind {
    /// No operation.
    Idle,
    Static,
    Dynamic,
    Indirect,
}

/// Temporal class of a labelled span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Static,
    Dynamic,
}

impl GestureClass {
    pub const ALL: [GestureClass; 16] = [
        GestureClass::Normal,
        GestureClass::WristUp,
        GestureClass::CoverScreen,
        GestureClass::BlockLeft,
        GestureClass::CloseToMouth,
        GestureClass::HandInPocket,
        GestureClass::PhoneCoverWatch,
        GestureClass::ClickMic,
        GestureClass::ClickMicAdd,
        GestureClass::ClickSpeaker,
        GestureClass::PinchSides,
        GestureClass::PinchDiag,
        GestureClass::Pinch,
        GestureClass::RotateIn,
        GestureClass::RotateOut,
        GestureClass::Bend,
    ];

    /// The twelve classes of the main recognizer (Normal + 11 direct gestures).
    pub const MAIN: [GestureClass; 12] = [
        GestureClass::Normal,
        GestureClass::WristUp,
        GestureClass::CoverScreen,
        GestureClass::BlockLeft,
        GestureClass::CloseToMouth,
        GestureClass::HandInPocket,
        GestureClass::PhoneCoverWatch,
        GestureClass::ClickMic,
        GestureClass::ClickMicAdd,
        GestureClass::ClickSpeaker,
        GestureClass::PinchSides,
        GestureClass::PinchDiag,
    ];

    pub const STATIC: [GestureClass; 6] = [
        GestureClass::WristUp,
        GestureClass::CoverScreen,
        GestureClass::BlockLeft,
        GestureClass::CloseToMouth,
        GestureClass::HandInPocket,
        GestureClass::PhoneCoverWatch,
    ];

    pub const TOUCH: [GestureClass; 5] = [
        GestureClass::ClickMic,
        GestureClass::ClickMicAdd,
        GestureClass::ClickSpeaker,
        GestureClass::PinchSides,
        GestureClass::PinchDiag,
    ];

    pub const INDIRECT: [GestureClass; 4] = [
        GestureClass::Pinch,
        GestureClass::RotateIn,
        GestureClass::RotateOut,
        GestureClass::Bend,
    ];

    pub fn kind(self) -> GestureKind {
        use GestureClass::*;
        match self {
            Normal => GestureKind::Idle,
            WristUp | CoverScreen | BlockLeft | CloseToMouth | HandInPocket | PhoneCoverWatch => {
                GestureKind::Static
            }
            ClickMic | ClickMicAdd | ClickSpeaker | PinchSides | PinchDiag => GestureKind::Dynamic,
            Pinch | RotateIn | RotateOut | Bend => GestureKind::Indirect,
        }
    }

    pub fn is_touch(self) -> bool {
        self.kind() == GestureKind::Dynamic
    }

    pub fn name(self) -> &'static str {
        use GestureClass::*;
        match self {
            Normal => "Normal",
            WristUp => "WristUp",
            CoverScreen => "CoverScreen",
            BlockLeft => "BlockLeft",
            CloseToMouth => "CloseToMouth",
            HandInPocket => "HandInPocket",
            PhoneCoverWatch => "PhoneCoverWatch",
            ClickMic => "ClickMic",
            ClickMicAdd => "ClickMicAdd",
            ClickSpeaker => "ClickSpeaker",
            PinchSides => "PinchSides",
            PinchDiag => "PinchDiag",
            Pinch => "Pinch",
            RotateIn => "RotateIn",
            RotateOut => "RotateOut",
            Bend => "Bend",
        }
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GestureClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let found = match key.as_str() {
            "normal" | "none" | "nooperation" => GestureClass::Normal,
            "wristup" => GestureClass::WristUp,
            "coverscreen" | "cover" => GestureClass::CoverScreen,
            "blockleft" | "block" => GestureClass::BlockLeft,
            "closetomouth" | "close2mouth" => GestureClass::CloseToMouth,
            "handinpocket" => GestureClass::HandInPocket,
            "phonecoverwatch" | "phone2watch" => GestureClass::PhoneCoverWatch,
            "clickmic" => GestureClass::ClickMic,
            "clickmicadd" => GestureClass::ClickMicAdd,
            "clickspeaker" => GestureClass::ClickSpeaker,
            "pinchsides" | "pinchthesides" => GestureClass::PinchSides,
            "pinchdiag" | "pinchthediag" => GestureClass::PinchDiag,
            "pinch" => GestureClass::Pinch,
            "rotatein" => GestureClass::RotateIn,
            "rotateout" => GestureClass::RotateOut,
            "bend" => GestureClass::Bend,
            _ => return Err(Error::param(format!("unknown gesture label '{s}'"))),
        };
        Ok(found)
    }
}
