//! Shadow detection toolkit for agro-photovoltaic scenes.
//!
//! * [`tensorcore`]: float64 reverse-mode autodiff with strict shape checks.
//! * [`models`]: encoder-decoder mask network, GAN shadow attenuator and a
//!   single-shot grid detector, with their training loops.
//! * [`datakit`]: samples, the on-disk dataset format, augmentation,
//!   splitting and a seeded synthetic scene generator.
//! * [`evalkit`]: IoU matching, AP / mAP, confidence-sweep curves, mask IoU
//!   and FLOPs accounting.

pub mod datakit;
pub mod evalkit;
pub mod models;
pub mod tensorcore;
