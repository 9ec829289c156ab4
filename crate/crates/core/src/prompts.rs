//! Prompt text used by the episode loop and the verifier. The query image is
//! attached as a separate content part ahead of these instructions.

/// Task instruction for the map-augmented agent. Sent as the first user
/// message together with the query image.
pub const AGENT_PROMPT: &str = "You are given an image, and your task is to use your exceptional skills to determine the precise coordinates of the location depicted.\n\nCarefully examine the image, taking note of any distinctive features, POIs, landmarks, vegetation, or other elements that could serve as clues.\n\nWhen extra information is needed to search for a location or confirm precise coordinates, you can use the given tools to get the information from search engine and maps.\n\nOnce you have gathered sufficient evidence, provide your best inference for the coordinates in the following JSON format:\n\n{\"lat\": latitude, \"lon\": longitude, \"city\": city, \"country\": country}.\n\nUse signed values for latitude and longitude to indicate N/S and E/W.\nIf you cannot narrow it down, then provide your best guess.";

/// Task instruction for tool-less direct prediction baselines.
pub const DIRECT_PROMPT: &str = "You are given an image, and your task is to use your exceptional skills to determine the precise coordinates of the location depicted.\n\nCarefully examine the image, taking note of any distinctive features, POIs, landmarks, vegetation, or other elements that could serve as clues.\n\nAfter showing your thinking, provide your final answer in the JSON format:\n\n{\"lat\": latitude, \"lon\": longitude, \"city\": city, \"country\": country}\n\nUse signed values for latitude and longitude to indicate N/S and E/W.\nIf you cannot narrow it down, then provide your best guess.";

/// System instruction for the verifier that aggregates parallel candidates.
pub const VERIFIER_PROMPT: &str = "You are a strict geo-localization solver.\n\nYou will be given an image, the original task, and multiple candidate answers from other agents.\nSynthesize the best final location.\n\nIf candidates disagree, pick the most evidence-consistent and geographically plausible one.\n\nAfter thinking, provide your final answer in the JSON format:\n\n{\"lat\": latitude, \"lon\": longitude, \"city\": city, \"country\": country}.\n\nUse signed values for latitude and longitude to indicate N/S and E/W.";

/// Appended on the last permitted turn: tools are disabled and the policy
/// must commit to an answer.
pub const FORCED_ANSWER_PROMPT: &str = "The interaction budget is exhausted. Do not call any more tools. Based on the evidence gathered so far, provide your final answer now in the JSON format:\n\n{\"lat\": latitude, \"lon\": longitude, \"city\": city, \"country\": country}.\n\nIf you cannot narrow it down, then provide your best guess.";
