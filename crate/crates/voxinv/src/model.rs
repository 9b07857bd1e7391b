//! Either network behind one type, built from its architecture tag.

use voxinv_core::nets::{Architecture, Denoiser, Inverter, Network};
use voxinv_core::params::ParamStore;
use voxinv_core::{Result, Tensor};

#[derive(Debug, Clone)]
pub enum Model {
    Denoiser(Denoiser<f32>),
    Inverter(Inverter<f32>),
}

impl Model {
    pub fn build(arch: Architecture, seed: u64) -> Result<Self> {
        Ok(match arch {
            Architecture::Denoiser(c) => Model::Denoiser(Denoiser::new(c, seed)?),
            Architecture::Inverter(c) => Model::Inverter(Inverter::new(c, seed)?),
        })
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Denoiser(n) => n.architecture(),
            Model::Inverter(n) => n.architecture(),
        }
    }

    pub fn params(&self) -> &ParamStore<f32> {
        match self {
            Model::Denoiser(n) => n.params(),
            Model::Inverter(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        match self {
            Model::Denoiser(n) => n.params_mut(),
            Model::Inverter(n) => n.params_mut(),
        }
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            Model::Denoiser(n) => n.forward_infer(x),
            Model::Inverter(n) => n.forward_infer(x),
        }
    }
}
