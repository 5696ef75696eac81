#pragma once

#include "psfcycle/config.hpp"
#include "psfcycle/inference.hpp"
#include "psfcycle/trainer.hpp"

#include <filesystem>
#include <variant>

namespace psfcycle {

/// Checkpoint archive layout (little-endian):
///
///   "PSFCYCLE-CKPT\n"          14-byte magic
///   uint64                      header length in bytes
///   JSON header                 {"format": 1, "kind": ..., "config": {...},
///                                "epoch": e, "step": s, "adam_steps": {...},
///                                "tensors": [{"name", "shape", "offset"}, ...]}
///   float32 payload             tensors back to back, offsets in elements
///
/// Tensor names are hierarchical ("g_ab.enc0.0.conv.weight", "adam.g.m.<name>",
/// "pool_a.3", ...). Kinds: "cycle" (full TrainState), "baseline" (supervised
/// U-Net) and "identity" (no parameters; the model returns its input).
enum class CheckpointKind { cycle, baseline, identity };

std::string to_string(CheckpointKind k);

void save_checkpoint(const TrainState& s, const std::filesystem::path& path);
void save_checkpoint(const BaselineState& s, const std::filesystem::path& path);
void save_identity_checkpoint(const std::filesystem::path& path);

TrainState load_train_state(const std::filesystem::path& path);
BaselineState load_baseline_state(const std::filesystem::path& path);

/// Kind stored in a checkpoint file.
CheckpointKind checkpoint_kind(const std::filesystem::path& path);

/// The blurred-to-sharp model of any checkpoint kind, ready for inference.
using InferenceModel = std::variant<Generator<float>, IdentityModel>;
InferenceModel load_inference_model(const std::filesystem::path& path);

/// Learned kernel of a "cycle" checkpoint whose reverse model is the PSF layer.
PsfKernel<float> load_learned_kernel(const std::filesystem::path& path);

}  // namespace psfcycle
