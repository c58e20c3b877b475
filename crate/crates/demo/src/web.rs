use wasm_bindgen::prelude::*;

use crate::Demo;

fn js(e: crate::DemoError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = Demo)]
pub struct WebDemo(Demo);

#[wasm_bindgen(js_class = Demo)]
impl WebDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<WebDemo, JsError> {
        Demo::new(seed as u64).map(WebDemo).map_err(js)
    }

    pub fn width(&self) -> usize {
        self.0.dims().0
    }

    pub fn height(&self) -> usize {
        self.0.dims().1
    }

    pub fn depth(&self) -> usize {
        self.0.dims().2
    }

    pub fn steps(&self) -> usize {
        self.0.steps()
    }

    pub fn dice(&self) -> Result<f64, JsError> {
        self.0.dice().map_err(js)
    }

    pub fn click(&mut self, x: usize, y: usize, z: usize, object: bool) -> Result<bool, JsError> {
        self.0.click(x, y, z, object).map_err(js)
    }

    pub fn refine(&mut self) -> Result<f64, JsError> {
        self.0.refine().map_err(js)
    }

    /// RGBA bytes for `ImageData`.
    pub fn render(&self, z: usize) -> Result<Vec<u8>, JsError> {
        self.0.render(z).map_err(js)
    }
}
