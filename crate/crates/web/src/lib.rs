//! WebAssembly bindings for the browser demo in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

/// Scores `[4, n]` followed by the blended probabilities, as one flat array.
#[wasm_bindgen]
pub fn attention_explore(
    h_obs: &[f32],
    h_act: &[f32],
    logits: &[f32],
    n: usize,
    m: f32,
    alpha: &[f32],
) -> Result<Vec<f32>, String> {
    let alpha: [f32; 4] = alpha
        .try_into()
        .map_err(|_| "alpha needs four values".to_string())?;
    let e = demo::explore(h_obs, h_act, logits, n, m, alpha)?;
    Ok(e.scores.into_iter().chain(e.probs).collect())
}

/// Names of the shipped maps.
#[wasm_bindgen]
pub fn map_names() -> Vec<String> {
    thespian::world::maps::ALL
        .iter()
        .map(|(n, _)| n.to_string())
        .collect()
}

#[wasm_bindgen]
pub struct Game(demo::Session);

#[wasm_bindgen]
impl Game {
    #[wasm_bindgen(constructor)]
    pub fn new(map: &str, character: &str, seed: u32) -> Result<Game, String> {
        demo::Session::new(map, character, u64::from(seed)).map(Game)
    }

    pub fn characters(&self) -> Vec<String> {
        self.0.characters()
    }

    pub fn view(&self) -> String {
        self.0.view()
    }

    pub fn act(&mut self, command: &str) -> String {
        self.0.act(command)
    }

    pub fn done(&self) -> bool {
        self.0.done()
    }

    pub fn summary(&self) -> String {
        self.0.summary()
    }

    #[wasm_bindgen(js_name = loadCheckpoint)]
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<(), String> {
        self.0.load_checkpoint(bytes)
    }

    pub fn trained(&self) -> bool {
        self.0.trained()
    }

    /// One line per head: value estimate, then the `k` likeliest verbs and objects.
    pub fn heads(&self, k: usize) -> Vec<String> {
        self.0
            .heads(k)
            .into_iter()
            .map(|h| {
                let fmt = |xs: &[(String, f32)]| {
                    xs.iter()
                        .map(|(n, p)| format!("{n}:{p:.3}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                format!("{}|{:.3}|{}|{}", h.character, h.value, fmt(&h.verbs), fmt(&h.objects))
            })
            .collect()
    }
}
