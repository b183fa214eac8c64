#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "canids/data/dataset.hpp"
#include "canids/metrics/metrics.hpp"
#include "canids/model/transformer.hpp"

namespace canids::train {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// -log P_true, floored so a zero probability gives a large finite loss.
double cross_entropy(std::span<const double> probs, std::size_t true_class);

struct LossGrad {
  double loss = 0.0;                // batch mean
  std::vector<double> per_example;  // -log softmax(logits)[label]
  nn::Mat dlogits;                  // d(mean loss)/d(logits)
};
// Log-sum-exp form of the same loss computed from logits.
LossGrad cross_entropy_logits(nn::ConstRef logits, std::span<const int> labels);

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay: theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
// Frozen tensors are skipped; tensors with decay=false get no decay.
class AdamW {
 public:
  AdamW(const nn::ParamStore& store, AdamWConfig config);

  // Throws TrainError, leaving every parameter untouched, when any trainable
  // gradient is non-finite.
  void step(nn::ParamStore& store);
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::vector<nn::Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  std::size_t accumulation = 1;
  double lr = 5e-5;
  double weight_decay = 0.01;
  std::size_t eval_batch = 32;
  std::uint64_t seed = 0;
  bool drop_last = false;
  std::size_t max_steps = 0;  // stop after this many optimizer steps; 0 = no limit

  // Encoder: lr 5e-5, eval batch 32. Decoder: lr 3e-5, accumulation 4, eval batch 16.
  static TrainConfig defaults_for(text::Arch arch);
  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  bool apply(const std::string& key, const std::string& value);
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0, val_loss = 0.0, ba = 0.0, prec = 0.0, dr = 0.0, f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;

  std::string to_csv() const;  // epoch,train_loss,val_loss,ba,prec,dr,f1
  std::string to_svg() const;  // loss curves and validation metrics
};

struct Evaluation {
  std::vector<int> predictions;
  std::vector<int> labels;
  double loss = 0.0;
  metrics::MetricsReport report;
};

// Eval-mode predictions and metrics. Identical token sequences are computed once.
Evaluation evaluate(const model::TransformerModel& model, std::span<const can::LabeledRecord> records,
                    std::size_t batch_size = 32);

struct TrainResult {
  TrainHistory history;
  std::size_t best_epoch = 0;
  model::TransformerModel best;  // highest validation BA; ties go to the later epoch
};

using EpochCallback = std::function<void(const EpochStats&)>;

TrainResult train_run(model::TransformerModel& model, std::span<const can::LabeledRecord> train_set,
                      std::span<const can::LabeledRecord> validation_set, const TrainConfig& config,
                      const EpochCallback& on_epoch = {});
TrainResult train_run(model::TransformerModel& model, std::span<const can::LabeledRecord> records,
                      const data::DatasetBundle& bundle, const TrainConfig& config,
                      const EpochCallback& on_epoch = {});

}  // namespace canids::train
