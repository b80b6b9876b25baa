#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmalign/encoders.hpp"
#include "mmalign/params.hpp"
#include "mmalign/synthdata.hpp"

namespace mmalign::trainer {

enum class LossKind { ClipDos, ClipDensity, AllPairs, Anchored, TensorClip, Barlow3d };

std::string loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);
std::vector<Modality> required_modalities(LossKind k);

struct TrainConfig {
    LossKind loss_kind = LossKind::Anchored;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    double peak_lr = 1e-4;
    double weight_decay = 5e-4;
    std::size_t warmup_epochs = 10;
    std::uint64_t seed = 0;
    std::size_t d = 32;
    double tau = 0.07;
    double lambda = 0.005;
    bool learn_tau = true;  // log-temperature, clamped to tau in [0.01, 1.0]
    EncoderConfig encoder;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& s);
};

// Named presets: "desk" for quick local runs, "paper-pretrain" /
// "paper-retrieval" for the full-scale reference settings.
TrainConfig preset_config(const std::string& name);

struct MetricRow {
    std::size_t epoch = 0;
    double loss = 0.0;  // per-sample mean over the epoch
    double lr = 0.0;
    double top1_retrieval = 0.0;
};

struct Checkpoint {
    ParamSet params;  // encoders plus loss.log_tau where applicable
    ParamSet opt_m;
    ParamSet opt_v;
    std::uint64_t opt_step = 0;
    std::size_t epoch = 0;
    std::string config_json;
    std::vector<MetricRow> history;
};

// Linear ramp 0 -> peak over the warmup span, then cosine decay to 0.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct AdamWState {
    ParamSet m;
    ParamSet v;
    std::uint64_t t = 0;
};

// Decoupled weight decay: moments see raw gradients, decay hits the weights.
void optimizer_step(ParamSet& params, const std::map<std::string, std::vector<double>>& grads,
                    AdamWState& state, double lr, double weight_decay);

Checkpoint pretrain(const TrainConfig& cfg, const Dataset& data);

struct FinetuneConfig {
    std::vector<double> lr_sweep{1e-3, 1e-4, 1e-5};
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::size_t warmup_epochs = 2;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
};

struct FinetuneResult {
    double test_mae = 0.0;
    double best_val_mae = 0.0;
    double best_lr = 0.0;
    std::size_t best_epoch = 0;
    ParamSet model;  // crystal encoder + head at the selected checkpoint
};

// Joint training of the crystal encoder and a linear head; selects the
// (lr, epoch) checkpoint with minimum validation MAE, reports test MAE.
FinetuneResult finetune(const Checkpoint& ckpt, const Dataset& labeled,
                        const std::string& property, const FinetuneConfig& cfg);

// Forward pass of one modality over a list of records.
EmbeddingBatch encode_batch(Modality m, const std::vector<const MaterialRecord*>& records,
                            const ParamSet& params, const EncoderConfig& cfg);

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void write_metrics_csv(const std::vector<MetricRow>& history, const std::string& path);

}  // namespace mmalign::trainer
