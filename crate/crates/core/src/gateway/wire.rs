//! JSON bodies exchanged with the model services.
//!
//! | service  | request                                   | response                                   |
//! |----------|-------------------------------------------|--------------------------------------------|
//! | chat     | OpenAI Chat Completions                   | `{choices:[{message:{content}}], usage}`   |
//! | detector | `POST /detect {image, prompts}`           | `{detections:[{prompt_index,bbox,score}]}` |
//! | tracker  | `POST /track/init {image, boxes}`         | `{state_id, tracks:[{id, mask_rle}]}`      |
//! |          | `POST /track/step {state_id,image,add_boxes}` | same                                   |
//! | embedder | `POST /embed {texts}`                     | `{vectors:[[f32]]}`                        |

use serde::{Deserialize, Serialize};

use super::chat::{ChatMessage, ChatRequest, ContentPart, Role, Usage};
use crate::image::{ImageError, ImagePayload};
use crate::mask::Rle;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireChatRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireMessage {
    pub role: String,
    pub content: WireContent,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum WireContent {
    Text(String),
    Parts(Vec<WirePart>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type")]
pub enum WirePart {
    #[serde(rename = "text")]
    Text { text: String },
    #[serde(rename = "image_url")]
    ImageUrl { image_url: WireImageUrl },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireChatResponse {
    pub choices: Vec<WireChoice>,
    #[serde(default)]
    pub usage: Option<WireUsage>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireChoice {
    pub message: WireAssistantMessage,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireAssistantMessage {
    #[serde(default = "assistant_role")]
    pub role: String,
    pub content: Option<String>,
}

fn assistant_role() -> String {
    "assistant".into()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct WireUsage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl From<&ChatRequest> for WireChatRequest {
    fn from(req: &ChatRequest) -> Self {
        let messages = req
            .messages
            .iter()
            .map(|m| WireMessage {
                role: m.role.as_str().to_string(),
                content: WireContent::Parts(
                    m.content
                        .iter()
                        .map(|p| match p {
                            ContentPart::Text(text) => WirePart::Text { text: text.clone() },
                            ContentPart::Image(img) => WirePart::ImageUrl {
                                image_url: WireImageUrl { url: img.data_url() },
                            },
                        })
                        .collect(),
                ),
            })
            .collect();
        Self {
            model: req.model.clone(),
            messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        }
    }
}

impl TryFrom<WireChatRequest> for ChatRequest {
    type Error = WireError;

    fn try_from(w: WireChatRequest) -> Result<Self, Self::Error> {
        let mut messages = Vec::with_capacity(w.messages.len());
        for m in w.messages {
            let role = Role::parse(&m.role).ok_or_else(|| WireError::UnknownRole(m.role.clone()))?;
            let content = match m.content {
                WireContent::Text(t) => vec![ContentPart::Text(t)],
                WireContent::Parts(parts) => parts
                    .into_iter()
                    .map(|p| match p {
                        WirePart::Text { text } => Ok(ContentPart::Text(text)),
                        WirePart::ImageUrl { image_url } => {
                            Ok(ContentPart::Image(ImagePayload::from_data_url(&image_url.url)?))
                        }
                    })
                    .collect::<Result<Vec<_>, WireError>>()?,
            };
            messages.push(ChatMessage { role, content });
        }
        Ok(ChatRequest {
            model: w.model,
            messages,
            temperature: w.temperature,
            max_tokens: w.max_tokens,
        })
    }
}

impl WireChatResponse {
    pub fn from_text(text: String, usage: Usage) -> Self {
        Self {
            choices: vec![WireChoice {
                message: WireAssistantMessage {
                    role: assistant_role(),
                    content: Some(text),
                },
            }],
            usage: Some(WireUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            }),
        }
    }

    /// First choice's text, if any.
    pub fn text(&self) -> Option<&str> {
        self.choices.first().and_then(|c| c.message.content.as_deref())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("unknown message role `{0}`")]
    UnknownRole(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireDetectRequest {
    pub image: String,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireDetection {
    pub prompt_index: i64,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireDetectResponse {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireTrackInit {
    pub image: String,
    pub boxes: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireTrackStep {
    pub state_id: String,
    pub image: String,
    #[serde(default)]
    pub add_boxes: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct WireTrack {
    pub id: u64,
    pub mask_rle: Rle,
}

/// Tracker response for both `init` and `step`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TrackerReply {
    pub state_id: String,
    pub tracks: Vec<WireTrack>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireEmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireEmbedResponse {
    pub vectors: Vec<Vec<f32>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_string_content_accepted() {
        let body = r#"{"model":"m","messages":[{"role":"user","content":"hi"}]}"#;
        let w: WireChatRequest = serde_json::from_str(body).unwrap();
        let req = ChatRequest::try_from(w).unwrap();
        assert_eq!(req.messages[0].content, vec![ContentPart::Text("hi".into())]);
        assert_eq!(req.max_tokens, 1024);
    }

    #[test]
    fn request_shape_matches_openai() {
        let img = ImagePayload::new("image/png", vec![1, 2, 3]).unwrap();
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(vec![
                ContentPart::Text("look".into()),
                ContentPart::Image(img),
            ])],
            temperature: 0.0,
            max_tokens: 16,
        };
        let v = serde_json::to_value(WireChatRequest::from(&req)).unwrap();
        assert_eq!(v["messages"][0]["content"][0]["type"], "text");
        assert_eq!(v["messages"][0]["content"][1]["type"], "image_url");
        assert_eq!(
            v["messages"][0]["content"][1]["image_url"]["url"],
            "data:image/png;base64,AQID"
        );
        assert_eq!(v["max_tokens"], 16);
    }

    proptest! {
        #[test]
        fn chat_request_wire_round_trip(
            texts in proptest::collection::vec(".{0,20}", 1..4),
            bytes in proptest::collection::vec(any::<u8>(), 1..32),
            temperature in 0.0f64..2.0,
            max_tokens in 1u32..4096,
        ) {
            let mut parts: Vec<ContentPart> = texts.into_iter().map(ContentPart::Text).collect();
            parts.push(ContentPart::Image(ImagePayload::new("image/jpeg", bytes).unwrap()));
            let req = ChatRequest {
                model: "vlm".into(),
                messages: vec![ChatMessage::system("sys"), ChatMessage::user(parts)],
                temperature,
                max_tokens,
            };
            let json = serde_json::to_string(&WireChatRequest::from(&req)).unwrap();
            let back: WireChatRequest = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(ChatRequest::try_from(back).unwrap(), req);
        }
    }
}
