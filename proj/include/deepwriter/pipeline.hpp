#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "deepwriter/checkpoint.hpp"
#include "deepwriter/image_io.hpp"
#include "deepwriter/manifest.hpp"
#include "deepwriter/network.hpp"
#include "deepwriter/optimizer.hpp"
#include "deepwriter/patching.hpp"
#include "deepwriter/synth.hpp"

namespace deepwriter {

// --------------------------------------------------------------------------
// Data sets

struct LabeledImage {
  GrayImage image;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<std::string> labels;  // class index -> writer label
  std::vector<LabeledImage> train, val, test;

  std::vector<LabeledImage>& split(Split s) {
    return s == Split::train ? train : s == Split::val ? val : test;
  }
  const std::vector<LabeledImage>& split(Split s) const {
    return s == Split::train ? train : s == Split::val ? val : test;
  }
};

/// Loads every image of a split manifest. Entries without a split are
/// rejected; labels come from all entries in sorted order.
inline Dataset load_dataset(const std::vector<ManifestEntry>& entries) {
  Dataset d;
  d.labels = writer_labels(entries);
  for (const auto& e : entries) {
    if (!e.split) throw DomainError("manifest entry '" + e.path + "' has no split; run split first");
    d.split(*e.split).push_back({load_image(e.path), label_index(d.labels, e.writer)});
  }
  return d;
}

/// Same as load_dataset for in-memory synthetic samples, split 4:1:1 per
/// writer with `split_seed`.
inline Dataset dataset_from_samples(const std::vector<SyntheticSample>& samples,
                                    std::uint64_t split_seed) {
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    entries.push_back({std::to_string(i), samples[i].writer, {}});
  }
  entries = split_per_writer(std::move(entries), split_seed);
  Dataset d;
  d.labels = writer_labels(entries);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    d.split(*entries[i].split).push_back({samples[i].image, label_index(d.labels, samples[i].writer)});
  }
  return d;
}

// --------------------------------------------------------------------------
// Scoring

/// Mean of score vectors: out[j] = (1/N) Σ_i scores[i][j].
template <typename T>
Tensor<T> aggregate_scores(std::span<const Tensor<T>> scores) {
  if (scores.empty()) throw DomainError("aggregate_scores of an empty list");
  Tensor<T> out(scores.front().dims());
  for (const auto& s : scores) {
    if (s.dims() != out.dims()) {
      throw DomainError("aggregate_scores: score vector dims " + format_dims(s.dims()) +
                        " differ from " + format_dims(out.dims()));
    }
    out += s;
  }
  out *= T{1} / static_cast<T>(scores.size());
  return out;
}

/// Score vector per patch (single stream) or per adjacent pair (two streams).
template <typename T>
std::vector<Tensor<T>> patch_scores(const Network<T>& net, const std::vector<GrayImage>& patches) {
  std::vector<Tensor<T>> tensors;
  tensors.reserve(patches.size());
  for (const auto& p : patches) {
    if (p.width != net.input_side() || p.height != net.input_side()) {
      throw ShapeError("patch " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                       " does not match network input " + std::to_string(net.input_side()));
    }
    tensors.push_back(to_tensor<T>(p, net.pixel_mean()));
  }
  std::vector<Tensor<T>> scores;
  if (net.streams() == 1) {
    for (const auto& t : tensors) scores.push_back(net.forward_single(t));
  } else {
    std::vector<std::size_t> idx(tensors.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (const auto& [a, b] : make_pairs(idx)) scores.push_back(net.forward_pair(tensors[a], tensors[b]));
  }
  return scores;
}

/// Resized and scanned patches of an image, in scan order.
inline std::vector<GrayImage> scanned_patches(const GrayImage& img, const PatchPlan& plan) {
  const GrayImage resized = resize_min_side(img, plan.patch_side);
  std::vector<GrayImage> out;
  for (auto& p : scan_patches(resized, plan)) out.push_back(std::move(p.image));
  return out;
}

template <typename T>
struct Identification {
  std::size_t writer = 0;
  Tensor<T> scores;
  std::size_t patches = 0;  // sampled patches fed to the network
};

/**
 * Resize, scan, sample, pair (two-stream networks), score every patch or
 * pair, average the score vectors and return the best-scoring writer.
 */
template <typename T>
Identification<T> identify(const Network<T>& net, const GrayImage& img, const PatchPlan& plan) {
  plan.validate();
  if (plan.patch_side != net.input_side()) {
    throw ShapeError("patch side " + std::to_string(plan.patch_side) + " does not match network input " +
                     std::to_string(net.input_side()));
  }
  const auto sampled = sample_uniform(scanned_patches(img, plan), plan.sample_ratio);
  const auto scores = patch_scores(net, sampled);
  Identification<T> r;
  r.scores = aggregate_scores<T>(scores);
  r.writer = argmax(r.scores);
  r.patches = sampled.size();
  return r;
}

// --------------------------------------------------------------------------
// Evaluation

template <typename T>
struct EvalRow {
  std::size_t item = 0;    // index into the evaluated image list
  std::size_t window = 0;  // first patch of the window (window protocol only)
  std::size_t predicted = 0;
  std::size_t truth = 0;
  std::size_t patches = 0;
  Tensor<T> scores;
};

template <typename T>
struct EvalReport {
  std::vector<EvalRow<T>> rows;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

namespace detail {
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

template <typename T>
EvalReport<T> finish_report(std::vector<EvalRow<T>> rows) {
  EvalReport<T> r;
  r.rows = std::move(rows);
  for (const auto& row : r.rows) r.correct += row.predicted == row.truth;
  r.accuracy = r.rows.empty() ? 0.0 : static_cast<double>(r.correct) / static_cast<double>(r.rows.size());
  return r;
}

inline void check_label(std::size_t label, std::size_t classes) {
  if (label >= classes) {
    throw DomainError("label " + std::to_string(label) + " outside the network's " +
                      std::to_string(classes) + " classes");
  }
}
}  // namespace detail

/// Top-1 identification accuracy over labelled images.
template <typename T>
EvalReport<T> evaluate(const Network<T>& net, std::span<const LabeledImage> items, const PatchPlan& plan,
                       std::size_t threads = 1) {
  for (const auto& it : items) detail::check_label(it.label, net.num_classes());
  std::vector<EvalRow<T>> rows(items.size());
  detail::parallel_for(items.size(), threads, [&](std::size_t i) {
    auto id = identify(net, items[i].image, plan);
    rows[i] = {i, 0, id.writer, items[i].label, id.patches, std::move(id.scores)};
  });
  return detail::finish_report(std::move(rows));
}

/**
 * Short-input protocol: every run of `k` consecutive scanned patches of
 * every image is identified on its own (k patches averaged for a single
 * stream, the k−1 adjacent pairs averaged for two streams).
 */
template <typename T>
EvalReport<T> evaluate_windows(const Network<T>& net, std::span<const LabeledImage> items,
                               const PatchPlan& plan, std::size_t k, std::size_t threads = 1) {
  if (k < 1) throw DomainError("window length must be >= 1");
  if (net.streams() == 2 && k < 2) throw DomainError("two-stream windows need at least 2 patches");
  for (const auto& it : items) detail::check_label(it.label, net.num_classes());
  std::vector<std::vector<EvalRow<T>>> per_item(items.size());
  detail::parallel_for(items.size(), threads, [&](std::size_t i) {
    const auto patches = scanned_patches(items[i].image, plan);
    for (std::size_t start = 0; start + k <= patches.size(); ++start) {
      const std::vector<GrayImage> window(patches.begin() + static_cast<std::ptrdiff_t>(start),
                                          patches.begin() + static_cast<std::ptrdiff_t>(start + k));
      const auto scores = patch_scores(net, window);
      auto agg = aggregate_scores<T>(scores);
      const std::size_t pred = argmax(agg);
      per_item[i].push_back({i, start, pred, items[i].label, k, std::move(agg)});
    }
  });
  std::vector<EvalRow<T>> rows;
  for (auto& v : per_item) std::move(v.begin(), v.end(), std::back_inserter(rows));
  return detail::finish_report(std::move(rows));
}

// --------------------------------------------------------------------------
// Training

struct MetricsRecord {
  long long iteration = 0;  // completed iterations
  double lr = 0.0;
  double loss = 0.0;        // mean batch loss since the previous record
  double train_accuracy = 0.0;  // batch top-1 since the previous record
  std::optional<double> val_accuracy;
};

/// "iter=<n> lr=<v> loss=<v> [val_acc=<v>]"
inline std::string format_metrics(const MetricsRecord& m) {
  char buf[160];
  int n = std::snprintf(buf, sizeof buf, "iter=%lld lr=%.6g loss=%.6f", m.iteration, m.lr, m.loss);
  if (m.val_accuracy) std::snprintf(buf + n, sizeof buf - static_cast<std::size_t>(n), " val_acc=%.4f", *m.val_accuracy);
  return buf;
}

inline std::string metrics_json(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["iter"] = m.iteration;
  j["lr"] = m.lr;
  j["loss"] = m.loss;
  j["train_acc"] = m.train_accuracy;
  if (m.val_accuracy) j["val_acc"] = *m.val_accuracy;
  return j.dump();
}

/// Scratch training or finetuning from a source checkpoint.
struct RunPhase {
  enum class Kind { scratch, finetune };
  Kind kind = Kind::scratch;
  const Checkpoint* source = nullptr;
  double classifier_lr_mult = 1.0;

  static RunPhase scratch() { return {}; }
  static RunPhase finetune(const Checkpoint& source) { return {Kind::finetune, &source, 10.0}; }
};

struct TrainOptions {
  PatchPlan eval_plan = PatchPlan::for_side(113);
  long long log_every = 0;  // 0: every val_every iterations
  long long val_every = 0;  // 0: lr_step / 10
  std::size_t threads = 1;
  InitOptions init;
  std::function<void(const MetricsRecord&)> on_metrics;
};

template <typename T>
struct TrainResult {
  Network<T> network;
  OptimState<T> state;
  std::vector<MetricsRecord> trace;
};

namespace detail {

// Gradient reduction runs over a fixed number of contiguous item blocks,
// summed in block order, so results do not depend on the thread count.
constexpr std::size_t kReductionBlocks = 8;

template <typename T>
struct BlockResult {
  std::vector<ParamGrads<T>> grads;
  double loss = 0.0;
  std::size_t correct = 0;
};

struct BatchItem {
  std::size_t image;
  std::uint64_t crop_seed;
  std::uint64_t dropout_seed;
};

inline double mean_gray(const std::vector<GrayImage>& images) {
  std::uint64_t total = 0, count = 0;
  for (const auto& img : images) {
    for (auto p : img.pixels) total += p;
    count += img.pixels.size();
  }
  return count ? static_cast<double>(total) / static_cast<double>(count) / 255.0 : 0.0;
}

}  // namespace detail

/**
 * Mini-batch training: each iteration draws batch_size images in shuffled
 * epoch order, takes a fresh random crop (an adjacent crop pair for two
 * streams) from each, and applies one SGD step on the batch-mean gradient.
 * Deterministic in config.seed.
 */
template <typename T>
TrainResult<T> train(const ArchitectureSpec& spec, int streams, const TrainConfig& config,
                     const Dataset& data, const RunPhase& phase, const TrainOptions& options = {}) {
  config.validate();
  if (data.train.empty()) throw DomainError("training set is empty");
  if (spec.num_classes != data.labels.size()) {
    throw DomainError("architecture has " + std::to_string(spec.num_classes) + " classes but the data has " +
                      std::to_string(data.labels.size()) + " writers");
  }
  for (const auto& it : data.train) detail::check_label(it.label, spec.num_classes);
  if (phase.kind == RunPhase::Kind::finetune && phase.source == nullptr) {
    throw DomainError("finetuning requires a source checkpoint");
  }

  Rng init_rng(derive_seed(config.seed, 1));
  TrainResult<T> result{Network<T>::build(spec, streams, init_rng, options.init), {}, {}};
  Network<T>& net = result.network;
  if (phase.kind == RunPhase::Kind::finetune) {
    transfer_parameters(net, *phase.source, /*include_classifier=*/false);
    net.reinitialize_classifier(init_rng, static_cast<T>(phase.classifier_lr_mult), options.init);
  } else {
    net.params()[net.classifier_index()].lr_mult = static_cast<T>(phase.classifier_lr_mult);
  }

  const std::size_t side = net.input_side();
  std::vector<GrayImage> images;
  images.reserve(data.train.size());
  for (const auto& it : data.train) images.push_back(resize_min_side(it.image, side));
  net.set_pixel_mean(static_cast<T>(detail::mean_gray(images)));
  const T mean = net.pixel_mean();

  result.state = OptimState<T>::zeros_like(net.params());
  OptimState<T>& state = result.state;
  const long long val_every = options.val_every > 0 ? options.val_every : std::max<long long>(1, config.lr_step / 10);
  const long long log_every = options.log_every > 0 ? options.log_every : val_every;
  PatchPlan eval_plan = options.eval_plan;
  eval_plan.patch_side = side;
  if (eval_plan.scan_stride == 0) eval_plan.scan_stride = side;

  Rng rng(derive_seed(config.seed, 2));
  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  const std::size_t batch = config.batch_size;
  std::vector<detail::BatchItem> items(batch);
  std::vector<detail::BlockResult<T>> blocks(detail::kReductionBlocks);
  for (auto& b : blocks) b.grads = net.zero_grads();
  auto grads = net.zero_grads();

  auto run_block = [&](std::size_t b) {
    auto& out = blocks[b];
    for (auto& g : out.grads) {
      g.weights.fill(T{0});
      g.biases.fill(T{0});
    }
    out.loss = 0.0;
    out.correct = 0;
    const std::size_t lo = b * batch / detail::kReductionBlocks;
    const std::size_t hi = (b + 1) * batch / detail::kReductionBlocks;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& item = items[i];
      const GrayImage& img = images[item.image];
      Rng crop_rng(item.crop_seed);
      std::vector<Tensor<T>> inputs;
      if (streams == 1) {
        inputs.push_back(to_tensor<T>(random_crop(img, side, crop_rng).image, mean));
      } else {
        auto [a, c] = random_adjacent_crops(img, side, crop_rng);
        inputs.push_back(to_tensor<T>(a.image, mean));
        inputs.push_back(to_tensor<T>(c.image, mean));
      }
      std::vector<const Tensor<T>*> ptrs;
      for (const auto& t : inputs) ptrs.push_back(&t);
      Rng dropout_rng(item.dropout_seed);
      const auto pass = net.forward(ptrs, Mode::train, &dropout_rng);
      const std::size_t label = data.train[item.image].label;
      out.loss += static_cast<double>(softmax_cross_entropy(pass.logits, label).loss);
      out.correct += argmax(pass.probabilities) == label;
      net.backward(pass, label, out.grads);
    }
  };

  double loss_acc = 0.0;
  std::size_t correct_acc = 0, seen_acc = 0;
  while (state.iteration < config.stop_iter) {
    const long long iter = state.iteration;
    const double lr = lr_at(iter, config);
    for (auto& item : items) {
      if (cursor == order.size()) {
        shuffle(std::span<std::size_t>(order), rng);
        cursor = 0;
      }
      item.image = order[cursor++];
      item.crop_seed = rng();
      item.dropout_seed = rng();
    }

    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, detail::kReductionBlocks);
    if (threads == 1) {
      for (std::size_t b = 0; b < detail::kReductionBlocks; ++b) run_block(b);
    } else {
      detail::parallel_for(detail::kReductionBlocks, threads, run_block);
    }
    double batch_loss = 0.0;
    std::size_t batch_correct = 0;
    for (std::size_t g = 0; g < grads.size(); ++g) {
      grads[g] = blocks[0].grads[g];
      for (std::size_t b = 1; b < detail::kReductionBlocks; ++b) grads[g] += blocks[b].grads[g];
      grads[g].weights *= T{1} / static_cast<T>(batch);
      grads[g].biases *= T{1} / static_cast<T>(batch);
    }
    for (const auto& b : blocks) {
      batch_loss += b.loss;
      batch_correct += b.correct;
    }
    batch_loss /= static_cast<double>(batch);
    if (!std::isfinite(batch_loss)) {
      throw DivergenceError("training diverged: non-finite loss at iteration " + std::to_string(iter), iter);
    }
    sgd_update<T>(net.params(), grads, state, config);

    loss_acc += batch_loss;
    correct_acc += batch_correct;
    seen_acc += 1;
    const long long done = state.iteration;
    const bool last = done == config.stop_iter;
    const bool validate = !data.val.empty() && (done % val_every == 0 || last);
    if (done % log_every == 0 || last || validate) {
      MetricsRecord m;
      m.iteration = done;
      m.lr = lr;
      m.loss = loss_acc / static_cast<double>(seen_acc);
      m.train_accuracy = static_cast<double>(correct_acc) / static_cast<double>(seen_acc * batch);
      if (validate) m.val_accuracy = evaluate(net, std::span(data.val), eval_plan, options.threads).accuracy;
      result.trace.push_back(m);
      if (options.on_metrics) options.on_metrics(m);
      loss_acc = 0.0;
      correct_acc = seen_acc = 0;
    }
  }
  return result;
}

/**
 * Transfers all stream parameters from `source` into a fresh `target_spec`
 * network, reinitializes the classifier at the target class count with a
 * tenfold learning-rate multiplier, then trains with `config`.
 */
template <typename T>
TrainResult<T> finetune(const ArchitectureSpec& target_spec, int streams, const Checkpoint& source,
                        const TrainConfig& config, const Dataset& data, const TrainOptions& options = {}) {
  return train<T>(target_spec, streams, config, data, RunPhase::finetune(source), options);
}

}  // namespace deepwriter
