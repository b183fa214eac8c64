#include "canids/train/train.hpp"

#include <cfloat>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "canids/util/kvconfig.hpp"

namespace canids::train {

using model::TransformerModel;
using nn::Mat;

double cross_entropy(std::span<const double> probs, std::size_t true_class) {
  if (true_class >= probs.size()) throw TrainError("true class out of range");
  return -std::log(std::max(probs[true_class], DBL_MIN));
}

LossGrad cross_entropy_logits(nn::ConstRef logits, std::span<const int> labels) {
  const auto n = logits.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw TrainError("logits and labels differ in length");
  LossGrad out;
  out.per_example.resize(labels.size());
  out.dlogits = nn::softmax(logits);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw TrainError("label out of range");
    const double l = nn::log_sum_exp(logits.row(i)) - logits(i, y);
    out.per_example[static_cast<std::size_t>(i)] = l;
    sum += l;
    out.dlogits(i, y) -= 1.0;
  }
  if (n > 0) {
    out.loss = sum / static_cast<double>(n);
    out.dlogits /= static_cast<double>(n);
  }
  return out;
}

AdamW::AdamW(const nn::ParamStore& store, AdamWConfig config) : config_(config) {
  for (const auto& p : store.all()) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void AdamW::step(nn::ParamStore& store) {
  auto& params = store.all();
  if (params.size() != m_.size()) throw TrainError("optimizer state does not match the parameter store");
  for (const auto& p : params) {
    if (p.frozen) continue;
    if (!p.grad.all_finite()) throw TrainError("non-finite gradient in " + p.name + "; step aborted");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.frozen) continue;
    const double shrink = p.decay ? 1.0 - lr * config_.weight_decay : 1.0;
    auto theta = p.value.values();
    auto g = p.grad.values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      theta[k] = theta[k] * shrink - lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

TrainConfig TrainConfig::defaults_for(text::Arch arch) {
  TrainConfig c;
  if (arch == text::Arch::Decoder) {
    c.lr = 3e-5;
    c.accumulation = 4;
    c.eval_batch = 16;
  }
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (accumulation < 1) fail("accumulation must be >= 1");
  if (eval_batch < 1) fail("eval_batch must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_kv() const {
  char lr_buf[40], wd_buf[40];
  std::snprintf(lr_buf, sizeof lr_buf, "%.17g", lr);
  std::snprintf(wd_buf, sizeof wd_buf, "%.17g", weight_decay);
  return {{"epochs", std::to_string(epochs)},         {"batch_size", std::to_string(batch_size)},
          {"accumulation", std::to_string(accumulation)}, {"lr", lr_buf},
          {"weight_decay", wd_buf},                   {"eval_batch", std::to_string(eval_batch)},
          {"train_seed", std::to_string(seed)},       {"drop_last", drop_last ? "true" : "false"},
          {"max_steps", std::to_string(max_steps)}};
}

bool TrainConfig::apply(const std::string& key, const std::string& value) {
  auto size = [&](std::size_t& out) {
    const long long v = parse_int(value, key);
    if (v < 0) throw ConfigError(key + ": must be >= 0");
    out = static_cast<std::size_t>(v);
  };
  if (key == "epochs") size(epochs);
  else if (key == "batch_size") size(batch_size);
  else if (key == "accumulation") size(accumulation);
  else if (key == "lr") lr = parse_double(value, key);
  else if (key == "weight_decay") weight_decay = parse_double(value, key);
  else if (key == "eval_batch") size(eval_batch);
  else if (key == "train_seed") seed = static_cast<std::uint64_t>(parse_int(value, key));
  else if (key == "drop_last") drop_last = parse_bool(value, key);
  else if (key == "max_steps") size(max_steps);
  else return false;
  return true;
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,ba,prec,dr,f1\n";
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss, e.ba,
                  e.prec, e.dr, e.f1);
    out += buf;
  }
  return out;
}

std::string TrainHistory::to_svg() const {
  constexpr double W = 360, H = 240, L = 50, R = 10, T = 25, B = 35;
  const std::size_t n = epochs.size();
  auto panel = [&](double x0, const std::string& title, const std::vector<std::pair<std::string, std::vector<double>>>& series,
                   double lo, double hi) {
    std::string s;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "<g transform=\"translate(%g,0)\"><text x=\"%g\" y=\"16\" font-size=\"13\">%s</text>"
                  "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"#888\"/>"
                  "<text x=\"4\" y=\"%g\" font-size=\"10\">%.3g</text><text x=\"4\" y=\"%g\" font-size=\"10\">%.3g</text>"
                  "<text x=\"%g\" y=\"%g\" font-size=\"10\">epoch</text>",
                  x0, L, title.c_str(), L, T, W - L - R, H - T - B, T + 4, hi, H - B, lo, W / 2, H - 8);
    s += buf;
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    for (std::size_t k = 0; k < series.size(); ++k) {
      s += std::string("<polyline fill=\"none\" stroke=\"") + colors[k % 4] + "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < n; ++i) {
        const double x = L + (n > 1 ? (W - L - R) * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
        const double fr = hi > lo ? (series[k].second[i] - lo) / (hi - lo) : 0.5;
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x, H - B - fr * (H - T - B));
        s += buf;
      }
      s += "\"/>";
      std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"10\" fill=\"%s\">%s</text>",
                    W - R - 70, T + 14 + 12.0 * static_cast<double>(k), colors[k % 4], series[k].first.c_str());
      s += buf;
    }
    return s + "</g>";
  };
  std::vector<double> tl, vl, ba, pr, dr, f1;
  for (const auto& e : epochs) {
    tl.push_back(e.train_loss);
    vl.push_back(e.val_loss);
    ba.push_back(e.ba);
    pr.push_back(e.prec);
    dr.push_back(e.dr);
    f1.push_back(e.f1);
  }
  double lmax = 0.0, mmin = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    lmax = std::max({lmax, tl[i], vl[i]});
    mmin = std::min({mmin, ba[i], pr[i], dr[i], f1[i]});
  }
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"240\" font-family=\"sans-serif\">";
  svg += panel(0, "loss", {{"train", tl}, {"validation", vl}}, 0.0, lmax > 0 ? lmax : 1.0);
  svg += panel(W, "validation metrics", {{"BA", ba}, {"PREC", pr}, {"DR", dr}, {"F1", f1}}, mmin < 1.0 ? mmin : 0.0, 1.0);
  return svg + "</svg>\n";
}

namespace {

std::string key_of(const text::TokenSequence& s) {
  return std::string(reinterpret_cast<const char*>(s.ids.data()), s.length * sizeof(text::TokenId));
}

}  // namespace

Evaluation evaluate(const TransformerModel& model, std::span<const can::LabeledRecord> records, std::size_t batch_size) {
  if (batch_size == 0) throw TrainError("eval batch size must be >= 1");
  const auto& tok = model.tokenizer();
  std::unordered_map<std::string, std::size_t> seen;
  std::vector<text::TokenSequence> unique;
  std::vector<std::size_t> slot(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto seq = tok.encode(records[i].frame);
    auto [it, fresh] = seen.emplace(key_of(seq), unique.size());
    if (fresh) unique.push_back(std::move(seq));
    slot[i] = it->second;
  }
  Mat logits(static_cast<Eigen::Index>(unique.size()), static_cast<Eigen::Index>(model.config().n_classes));
  for (std::size_t s = 0; s < unique.size(); s += batch_size) {
    const std::size_t n = std::min(batch_size, unique.size() - s);
    const std::span<const text::TokenSequence> chunk(unique.data() + s, n);
    logits.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n)) = model.logits(model.forward(chunk));
  }
  const Mat probs = nn::softmax(logits);
  Evaluation ev;
  ev.predictions.resize(records.size());
  ev.labels.resize(records.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(slot[i]);
    const int y = static_cast<int>(can::index_of(records[i].label));
    ev.labels[i] = y;
    ev.predictions[i] = static_cast<int>(model::argmax(std::span<const double>(probs.row(r).data(), static_cast<std::size_t>(probs.cols()))));
    loss += nn::log_sum_exp(logits.row(r)) - logits(r, y);
  }
  ev.loss = records.empty() ? 0.0 : loss / static_cast<double>(records.size());
  if (!records.empty())
    ev.report = metrics::compute_metrics(metrics::confusion_matrix(ev.predictions, ev.labels, model.config().n_classes));
  return ev;
}

TrainResult train_run(TransformerModel& model, std::span<const can::LabeledRecord> train_set,
                      std::span<const can::LabeledRecord> validation_set, const TrainConfig& config,
                      const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw TrainError("empty training set");
  const auto& tok = model.tokenizer();
  std::vector<text::TokenSequence> seqs;
  std::vector<int> labels;
  seqs.reserve(train_set.size());
  for (const auto& r : train_set) {
    seqs.push_back(tok.encode(r.frame));
    labels.push_back(static_cast<int>(can::index_of(r.label)));
  }

  AdamWConfig ac;
  ac.lr = config.lr;
  ac.weight_decay = config.weight_decay;
  AdamW opt(model.params(), ac);
  TrainResult result{TrainHistory{}, 0, model};
  double best_ba = -1.0;
  std::size_t batch_index = 0;
  bool stop = false;
  model.params().zero_grad();

  for (std::size_t epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    const auto batches = data::make_batches(seqs.size(), config.batch_size, config.seed, epoch, config.drop_last);
    Rng drop_rng(Rng::derive(config.seed, 0xd0d0000 + epoch));
    const nn::ForwardContext ctx{true, &drop_rng};
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t g = 0; g < batches.size() && !stop; g += config.accumulation) {
      const std::size_t group = std::min(config.accumulation, batches.size() - g);
      for (std::size_t b = g; b < g + group; ++b, ++batch_index) {
        std::vector<text::TokenSequence> batch;
        std::vector<int> y;
        for (auto i : batches[b]) {
          batch.push_back(seqs[i]);
          y.push_back(labels[i]);
        }
        model::Tape tape;
        const Mat logits = model.forward_train(batch, ctx, tape);
        LossGrad lg = cross_entropy_logits(logits, y);
        if (!std::isfinite(lg.loss))
          throw TrainError("non-finite loss at batch " + std::to_string(batch_index) + " (epoch " +
                           std::to_string(epoch + 1) + ")");
        for (double l : lg.per_example) loss_sum += l;
        seen += y.size();
        lg.dlogits /= static_cast<double>(group);
        model.backward(tape, lg.dlogits);
      }
      opt.step(model.params());
      model.params().zero_grad();
      if (config.max_steps > 0 && opt.steps() >= config.max_steps) stop = true;
    }

    EpochStats st;
    st.epoch = epoch + 1;
    st.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    if (!validation_set.empty()) {
      const Evaluation ev = evaluate(model, validation_set, config.eval_batch);
      st.val_loss = ev.loss;
      st.ba = ev.report.ba;
      st.prec = ev.report.prec;
      st.dr = ev.report.dr;
      st.f1 = ev.report.f1;
    }
    result.history.epochs.push_back(st);
    if (st.ba >= best_ba) {
      best_ba = st.ba;
      result.best_epoch = st.epoch;
      result.best = model;
    }
    if (on_epoch) on_epoch(st);
  }
  return result;
}

TrainResult train_run(TransformerModel& model, std::span<const can::LabeledRecord> records,
                      const data::DatasetBundle& bundle, const TrainConfig& config, const EpochCallback& on_epoch) {
  const auto tr = data::gather(records, bundle.train);
  const auto va = data::gather(records, bundle.validation);
  return train_run(model, tr, va, config, on_epoch);
}

}  // namespace canids::train
