// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "hfedckd/config.hpp"
#include "hfedckd/contrastive.hpp"
#include "hfedckd/data.hpp"
#include "hfedckd/generator.hpp"
#include "hfedckd/ipwd.hpp"
#include "hfedckd/model.hpp"

namespace hfedckd {

// Round orchestration. Each communication round samples a participant set,
// builds a pseudo-sample batch (completing any classes the teacher ensemble
// misses), runs every participant's local update (cross-entropy on local
// data + distillation from the global model + bidirectional contrastive
// alignment against global and snapshot), then trains the generator and
// distills the participants into the global model under inverse-probability
// weights. Client updates are pure functions of their inputs and a
// per-client seed stream, so they can run on any number of workers without
// changing the result.

struct ClientState {
  std::size_t id = 0;
  SplitModel model;
  SplitModel snapshot;                 // model as of the previous participated round
  std::vector<std::size_t> indices;    // train indices owned by this client
  std::vector<double> histogram;       // label histogram of the local shard
  double learning_rate = 0.001;
};

struct ServerState {
  SplitModel global_model;
  GeneratorNet generator;
  ParticipationLedger ledger;
  std::size_t round = 0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  std::vector<double> client_weights_normalized;  // aligned with participants
  double mean_train_loss = 0.0;
  double mean_kd_loss = 0.0;
  double mean_contrastive_loss = 0.0;
  double mean_client_accuracy = 0.0;  // over all clients (cached between participations)
  double std_client_accuracy = 0.0;
  double global_accuracy = 0.0;
  double distill_loss = 0.0;    // mean over the round's distillation steps
  double generator_loss = 0.0;  // mean over the round's generator steps
  std::vector<double> data_proportions;  // p_i over all clients
  double ideal_objective = 0.0;          // F
  double partial_objective = 0.0;        // F_t
  double objective_gap = 0.0;            // F - F_t
  double pseudo_label_divergence = 0.0;  // JS(ensemble labels || train labels)
  double wall_seconds = 0.0;             // not part of the metrics file
};

/// Uniform sample of `count` distinct clients; deterministic in
/// (seed, round).
inline std::vector<std::size_t> sample_clients(std::size_t n_clients, std::size_t count,
                                               std::uint64_t master_seed,
                                               std::size_t round_index) {
  if (count > n_clients)
    throw ConfigError("sample_clients: participant count exceeds client count");
  Rng rng = make_rng(master_seed, SeedTag::ClientSampling, round_index);
  std::vector<std::size_t> pool(n_clients);
  for (std::size_t i = 0; i < n_clients; ++i) pool[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Fraction of argmax-correct predictions; ties break toward the lowest
/// class index.
inline double evaluate(const SplitModel& model, const Dataset& test) {
  if (test.sample_count() == 0) return 0.0;
  if (test.input_extent() != model.spec.input_extent)
    throw ShapeError("evaluate: dataset extent does not match model input extent");
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.sample_count(); start += kChunk) {
    const std::size_t stop = std::min(start + kChunk, test.sample_count());
    TensorValue slice = TensorValue::zeros({stop - start, test.input_extent()});
    std::copy(test.features.data.begin() +
                  static_cast<std::ptrdiff_t>(start * test.input_extent()),
              test.features.data.begin() +
                  static_cast<std::ptrdiff_t>(stop * test.input_extent()),
              slice.data.begin());
    TensorValue logits = model_forward(model, slice);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      const auto row = logits.row(r);
      std::size_t best = 0;
      for (std::size_t c = 1; c < row.size(); ++c)
        if (row[c] > row[best]) best = c;
      if (static_cast<int>(best) == test.labels[start + r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.sample_count());
}

// ---------------------------------------------------------------------------
// Local objective: CE(local data) + kd_weight * KL(local || global on pseudo)
// + coefficient * multi-layer contrastive.

/// Quantities frozen for the whole local update: global/snapshot features on
/// the pseudo batch and the global model's teacher distribution.
struct PseudoContext {
  std::vector<TensorValue> global_layer_feats;
  std::vector<TensorValue> snapshot_layer_feats;
  TensorValue global_probs;
};

inline PseudoContext build_pseudo_context(const SplitModel& global_model,
                                          const SplitModel& snapshot,
                                          const PseudoBatch& batch) {
  PseudoContext ctx;
  EncodeResult genc = encode(global_model, batch.samples);
  ctx.global_layer_feats = std::move(genc.layer_features);
  ctx.global_probs = softmax(classify(global_model, genc.features));
  ctx.snapshot_layer_feats = encode(snapshot, batch.samples).layer_features;
  return ctx;
}

struct LocalObjectiveOptions {
  double kd_weight = 1.0;
  ContrastiveConfig contrastive;  // coefficient 0 disables the term entirely
};

struct LocalObjectiveResult {
  double total = 0.0;
  double cross_entropy = 0.0;
  double kd = 0.0;
  double contrastive = 0.0;
};

/// Loss and full parameter gradient of the client objective at the current
/// model point. The decode-direction gradient flows back through all three
/// classifiers into the local encoder, since every classification vector is
/// computed from the local feature.
inline LocalObjectiveResult local_objective(const SplitModel& model,
                                            const SplitModel& global_model,
                                            const SplitModel& snapshot,
                                            const PseudoContext& ctx,
                                            const TensorValue& data_x,
                                            const std::vector<int>& data_y,
                                            const PseudoBatch& batch,
                                            const LocalObjectiveOptions& opt,
                                            ModelGrad* grad_out) {
  LocalObjectiveResult res;
  ModelGrad grad;
  bool grad_initialized = false;

  if (data_x.rows() > 0) {
    ModelCache cache;
    TensorValue logits = model_forward(model, data_x, &cache);
    CrossEntropyResult ce = cross_entropy(logits, data_y);
    res.cross_entropy = ce.loss;
    if (grad_out) {
      auto [g, dx] = model_backward(model, cache, ce.dlogits);
      (void)dx;
      grad = std::move(g);
      grad_initialized = true;
    }
  }

  const bool want_kd = opt.kd_weight != 0.0 && batch.size() > 0;
  const bool want_contrastive =
      opt.contrastive.coefficient != 0.0 && batch.size() > 0;
  if (want_kd || want_contrastive) {
    ForwardCache enc_cache;
    TensorValue features = forward(model.encoder, batch.samples, &enc_cache);
    ForwardCache cls_cache;
    TensorValue logits = forward(model.classifier, features, &cls_cache);

    const std::size_t enc_depth = model.encoder.size();
    const std::size_t slots = enc_depth + 1;  // encoder layers + classifier
    const std::vector<double> lw = resolve_layer_weights(opt.contrastive, slots);

    TensorValue dlogits = TensorValue::zeros(logits.shape);
    std::vector<TensorValue> encoder_inject(enc_depth);
    TensorValue dfeatures_extra;  // gradient reaching the feature vector from
                                  // the frozen classifiers

    if (want_kd) {
      std::vector<double> mean_weights(batch.size(), 1.0 / static_cast<double>(batch.size()));
      const double w_one[] = {1.0};
      WeightedKlResult kl = weighted_kl_loss(softmax(logits), {ctx.global_probs},
                                             std::span<const double>(w_one, 1),
                                             mean_weights);
      res.kd = kl.loss;
      if (grad_out)
        for (std::size_t i = 0; i < dlogits.size(); ++i)
          dlogits.data[i] += opt.kd_weight * kl.dlogits.data[i];
    }

    if (want_contrastive) {
      const double tau = opt.contrastive.temperature;
      const double coeff = opt.contrastive.coefficient;
      std::vector<double> encode_losses(slots, 0.0);
      std::vector<double> decode_losses(slots, 0.0);

      // encoder layers, matched from the output side; layers whose extents
      // differ across architectures contribute zero
      const std::size_t global_depth = ctx.global_layer_feats.size();
      for (std::size_t l = 0; l < enc_depth; ++l) {
        const std::size_t from_output = enc_depth - 1 - l;
        if (from_output >= global_depth) continue;
        const std::size_t gl = global_depth - 1 - from_output;
        const TensorValue& local_feat = enc_cache.acts[l + 1];
        if (ctx.global_layer_feats[gl].cols() != local_feat.cols()) continue;
        if (ctx.snapshot_layer_feats.size() != enc_depth ||
            ctx.snapshot_layer_feats[l].cols() != local_feat.cols())
          continue;
        FeatureTriplet triplet;
        triplet.local = local_feat;
        triplet.global_side = ctx.global_layer_feats[gl];
        triplet.history = {ctx.snapshot_layer_feats[l]};
        ContrastiveResult enc =
            encode_contrastive_loss(triplet, tau, opt.contrastive.negative_count);
        encode_losses[l] = enc.loss;
        if (grad_out) {
          encoder_inject[l] = std::move(enc.dlocal);
          for (double& g : encoder_inject[l].data) g *= coeff * lw[l];
        }
      }

      // classifier slot: decode loss over the three classification vectors,
      // all computed from the local feature
      ForwardCache global_cls_cache, snapshot_cls_cache;
      TensorValue h_global = forward(global_model.classifier, features, &global_cls_cache);
      TensorValue h_prev = forward(snapshot.classifier, features, &snapshot_cls_cache);
      FeatureTriplet decode_triplet;
      decode_triplet.local = logits;
      decode_triplet.global_side = h_global;
      decode_triplet.history = {h_prev};
      ContrastiveResult dec = decode_contrastive_loss(
          decode_triplet, tau, std::min<std::size_t>(1, opt.contrastive.negative_count));
      decode_losses[slots - 1] = dec.loss;

      res.contrastive = multilayer_combine(encode_losses, decode_losses, opt.contrastive);

      if (grad_out) {
        const double decode_scale =
            coeff * lw[slots - 1] * opt.contrastive.decode_weight;
        for (std::size_t i = 0; i < dlogits.size(); ++i)
          dlogits.data[i] += decode_scale * dec.dlocal.data[i];
        // frozen classifiers: weights fixed, but their inputs are the local
        // features, so the gradient flows through them
        TensorValue dg = dec.dglobal;
        for (double& g : dg.data) g *= decode_scale;
        TensorValue dp = dec.dhistory[0];
        for (double& g : dp.data) g *= decode_scale;
        dfeatures_extra =
            backward(global_model.classifier, global_cls_cache, dg).input_gradient;
        TensorValue dprev =
            backward(snapshot.classifier, snapshot_cls_cache, dp).input_gradient;
        for (std::size_t i = 0; i < dfeatures_extra.size(); ++i)
          dfeatures_extra.data[i] += dprev.data[i];
      }
    }

    if (grad_out) {
      BackwardResult cls = backward(model.classifier, cls_cache, dlogits);
      TensorValue dfeatures = std::move(cls.input_gradient);
      if (!dfeatures_extra.empty())
        for (std::size_t i = 0; i < dfeatures.size(); ++i)
          dfeatures.data[i] += dfeatures_extra.data[i];
      if (encoder_inject.back().empty())
        encoder_inject.back() = std::move(dfeatures);
      else
        for (std::size_t i = 0; i < dfeatures.size(); ++i)
          encoder_inject.back().data[i] += dfeatures.data[i];
      BackwardResult enc = backward_multi(model.encoder, enc_cache, encoder_inject);
      if (grad_initialized) {
        tape_axpy(grad.encoder, enc.tape);
        tape_axpy(grad.classifier, cls.tape);
      } else {
        grad.encoder = std::move(enc.tape);
        grad.classifier = std::move(cls.tape);
        grad_initialized = true;
      }
    }
  }

  res.total = res.cross_entropy + opt.kd_weight * res.kd +
              opt.contrastive.coefficient * res.contrastive;
  if (grad_out) {
    if (!grad_initialized) {
      grad.encoder = GradientTape::zeros_like(model.encoder);
      grad.classifier = GradientTape::zeros_like(model.classifier);
    }
    *grad_out = std::move(grad);
  }
  return res;
}

struct LocalUpdateStats {
  double mean_total = 0.0;
  double mean_cross_entropy = 0.0;
  double mean_kd = 0.0;
  double mean_contrastive = 0.0;
  std::size_t steps = 0;
};

struct LocalUpdateOptions {
  std::size_t epochs = 2;
  std::size_t batch_size = 32;
  LocalObjectiveOptions objective;
};

/// Refresh the snapshot, then run E epochs of minibatch SGD on the combined
/// objective. Global model and snapshot stay untouched.
inline LocalUpdateStats local_update(ClientState& client, const SplitModel& global_model,
                                     const Dataset& train, const PseudoBatch& batch,
                                     const LocalUpdateOptions& opt, std::uint64_t master_seed,
                                     std::size_t round_index) {
  if (client.indices.empty())
    throw StateError("local_update: client " + std::to_string(client.id) +
                     " owns no samples");
  client.snapshot = client.model;

  LocalUpdateStats stats;
  if (opt.epochs == 0) return stats;

  const PseudoContext ctx = build_pseudo_context(global_model, client.snapshot, batch);
  Rng rng = make_rng(master_seed, SeedTag::LocalUpdate, round_index, client.id);
  std::vector<std::size_t> order = client.indices;
  const std::size_t width = train.input_extent();

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(start + opt.batch_size, order.size());
      TensorValue x = TensorValue::zeros({stop - start, width});
      std::vector<int> y(stop - start);
      for (std::size_t r = start; r < stop; ++r) {
        const std::size_t idx = order[r];
        std::copy(train.features.data.begin() + static_cast<std::ptrdiff_t>(idx * width),
                  train.features.data.begin() + static_cast<std::ptrdiff_t>((idx + 1) * width),
                  x.data.begin() + static_cast<std::ptrdiff_t>((r - start) * width));
        y[r - start] = train.labels[idx];
      }
      ModelGrad grad;
      LocalObjectiveResult obj = local_objective(client.model, global_model,
                                                 client.snapshot, ctx, x, y, batch,
                                                 opt.objective, &grad);
      sgd_step(client.model, grad, client.learning_rate);
      stats.mean_total += obj.total;
      stats.mean_cross_entropy += obj.cross_entropy;
      stats.mean_kd += obj.kd;
      stats.mean_contrastive += obj.contrastive;
      ++stats.steps;
    }
  }
  if (stats.steps > 0) {
    const double inv = 1.0 / static_cast<double>(stats.steps);
    stats.mean_total *= inv;
    stats.mean_cross_entropy *= inv;
    stats.mean_kd *= inv;
    stats.mean_contrastive *= inv;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Experiment state and the full round

struct FedContext {
  ExperimentConfig cfg;
  Dataset train;
  Dataset test;
  PartitionMap partition;
  std::vector<ClientState> clients;
  ServerState server;
  std::vector<double> data_proportions;   // p_i, fixed by the partition
  std::vector<double> global_histogram;   // train-split label distribution
  std::vector<double> client_accuracy;    // refreshed when a client participates
  double global_accuracy = 0.0;           // refreshed on eval rounds
  std::vector<std::size_t> exchange_rounds;  // distillation rounds under baseline
};

/// Diagnostic bundle for one completed round.
struct Diagnostics {
  std::vector<double> data_proportions;
  double ideal_objective = 0.0;    // F: mean KD loss over all clients
  double partial_objective = 0.0;  // F_t: p-weighted KD loss over participants
  double objective_gap = 0.0;      // F - F_t
  double pseudo_label_divergence = 0.0;
};

/// F, F_t and their gap, plus the divergence of the pseudo-batch label
/// distribution (under the weighted ensemble) from the train distribution.
inline Diagnostics diagnostics(const FedContext& ctx, const PseudoBatch& batch,
                               const std::vector<std::size_t>& participants,
                               std::span<const double> participant_weights) {
  Diagnostics diag;
  diag.data_proportions = ctx.data_proportions;

  TensorValue global_probs = softmax(model_forward(ctx.server.global_model, batch.samples));
  const std::size_t n = ctx.clients.size();
  std::vector<double> kd_loss(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    TensorValue teacher = softmax(model_forward(ctx.clients[i].model, batch.samples));
    double sum = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j)
      sum += kl_divergence(global_probs.row(j), teacher.row(j));
    kd_loss[i] = sum / static_cast<double>(batch.size());
  }
  for (double l : kd_loss) diag.ideal_objective += l;
  diag.ideal_objective /= static_cast<double>(n);

  double p_mass = 0.0;
  for (std::size_t id : participants) p_mass += ctx.data_proportions[id];
  for (std::size_t id : participants)
    diag.partial_objective += ctx.data_proportions[id] / p_mass * kd_loss[id];
  diag.objective_gap = diag.ideal_objective - diag.partial_objective;

  // ensemble-label histogram of the pseudo batch vs. the train distribution
  std::vector<const SplitModel*> teachers;
  for (std::size_t id : participants) teachers.push_back(&ctx.clients[id].model);
  std::vector<TensorValue> probs = teacher_probabilities(teachers, batch.samples);
  TensorValue mean = ensemble_probs(probs, participant_weights);
  std::vector<double> pseudo_hist(ctx.train.class_count, 0.0);
  for (std::size_t j = 0; j < mean.rows(); ++j) {
    const auto row = mean.row(j);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    pseudo_hist[best] += 1.0;
  }
  for (double& h : pseudo_hist) h /= static_cast<double>(mean.rows());
  diag.pseudo_label_divergence = label_divergence(pseudo_hist, ctx.global_histogram);
  return diag;
}

inline FedContext init_experiment(const ExperimentConfig& raw) {
  ExperimentConfig cfg = raw;
  resolve_config(cfg);

  FedContext ctx;
  ctx.cfg = cfg;
  switch (cfg.dataset) {
    case DatasetKind::Synthetic:
      ctx.train = synthetic_mixture(cfg.synthetic_classes, cfg.synthetic_features,
                                    cfg.synthetic_train,
                                    derive_seed(cfg.seed, SeedTag::Synthetic, 1),
                                    cfg.synthetic_separation, "train");
      ctx.test = synthetic_mixture(cfg.synthetic_classes, cfg.synthetic_features,
                                   cfg.synthetic_test,
                                   derive_seed(cfg.seed, SeedTag::Synthetic, 2),
                                   cfg.synthetic_separation, "test");
      break;
    case DatasetKind::FashionIdx:
      ctx.train = load_idx(cfg.data_dir + "/train-images-idx3-ubyte",
                           cfg.data_dir + "/train-labels-idx1-ubyte", "train");
      ctx.test = load_idx(cfg.data_dir + "/t10k-images-idx3-ubyte",
                          cfg.data_dir + "/t10k-labels-idx1-ubyte", "test");
      break;
    case DatasetKind::UciHar: {
      auto [train, test] = load_ucihar(cfg.data_dir);
      ctx.train = std::move(train);
      ctx.test = std::move(test);
      break;
    }
  }
  if (ctx.train.class_count != ctx.test.class_count ||
      ctx.train.input_extent() != ctx.test.input_extent())
    throw ConfigError("train/test splits disagree on classes or input extent");

  ctx.partition = dirichlet_partition(ctx.train, cfg.clients, cfg.dirichlet_alpha, cfg.seed);
  ctx.global_histogram.resize(ctx.train.class_count);
  std::vector<std::size_t> all(ctx.train.sample_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  ctx.global_histogram = label_histogram(ctx.train, all);

  const std::vector<ModelSpec> specs =
      assign_specs(cfg.clients, cfg.heterogeneity, cfg.seed, ctx.train.input_extent(),
                   cfg.feature_extent, ctx.train.class_count);
  if (!cfg.contrastive.layer_weights.empty()) {
    for (const ModelSpec& s : specs) {
      const std::size_t slots = family_hidden_widths(s.family).size() + 2;
      if (cfg.contrastive.layer_weights.size() != slots)
        throw ConfigError("config key 'layer_weights': length " +
                          std::to_string(cfg.contrastive.layer_weights.size()) +
                          " does not match the " + std::to_string(slots) +
                          "-layer models in this run (leave empty for uniform)");
    }
  }

  ctx.clients.reserve(cfg.clients);
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    ClientState c;
    c.id = i;
    c.model = build_model(specs[i], derive_seed(cfg.seed, SeedTag::ClientInit, i));
    c.snapshot = c.model;
    c.indices = ctx.partition.client_indices[i];
    c.histogram = label_histogram(ctx.train, c.indices);
    c.learning_rate = cfg.learning_rate;
    ctx.clients.push_back(std::move(c));
  }

  // the server holds the largest architecture at full capacity
  ModelSpec global_spec;
  global_spec.family = ModelFamily::Deep;
  global_spec.capacity = 1.0;
  global_spec.input_extent = ctx.train.input_extent();
  global_spec.feature_extent = cfg.feature_extent;
  global_spec.class_count = ctx.train.class_count;
  ctx.server.global_model =
      build_model(global_spec, derive_seed(cfg.seed, SeedTag::GlobalInit));
  ctx.server.generator = build_generator(
      ctx.train.class_count, ctx.train.input_extent(), 16, 16, {64},
      derive_seed(cfg.seed, SeedTag::GeneratorInit));
  ctx.server.ledger.budget = cfg.rounds;
  ctx.server.ledger.cardinality = cfg.participants_per_round;

  const double total = static_cast<double>(ctx.train.sample_count());
  ctx.data_proportions.resize(cfg.clients);
  for (std::size_t i = 0; i < cfg.clients; ++i)
    ctx.data_proportions[i] =
        static_cast<double>(ctx.partition.client_indices[i].size()) / total;

  ctx.client_accuracy.assign(cfg.clients, 0.0);
  for (std::size_t i = 0; i < cfg.clients; ++i)
    ctx.client_accuracy[i] = evaluate(ctx.clients[i].model, ctx.test);
  ctx.global_accuracy = evaluate(ctx.server.global_model, ctx.test);

  if (cfg.variant == Variant::Baseline) {
    if (cfg.rounds >= 2)
      ctx.exchange_rounds = {(cfg.rounds + 1) / 2, cfg.rounds};
    else
      ctx.exchange_rounds = {1};
  }
  return ctx;
}

inline bool is_exchange_round(const FedContext& ctx, std::size_t round_index) {
  if (ctx.cfg.variant != Variant::Baseline) return true;
  return std::find(ctx.exchange_rounds.begin(), ctx.exchange_rounds.end(), round_index) !=
         ctx.exchange_rounds.end();
}

/// One communication round; appends to the ledger and returns the record.
inline RoundRecord run_round(FedContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = ctx.cfg;
  const std::size_t round_index = ++ctx.server.round;

  RoundRecord rec;
  rec.round = round_index;
  rec.participants = sample_clients(cfg.clients, cfg.participants_per_round, cfg.seed,
                                    round_index);
  ctx.server.ledger.record(rec.participants);
  const bool exchange = is_exchange_round(ctx, round_index);

  // client weights depend only on the ledger and the label histograms, so
  // they are identical before and after the local updates
  std::vector<std::vector<double>> histograms;
  histograms.reserve(ctx.clients.size());
  for (const ClientState& c : ctx.clients) histograms.push_back(c.histogram);
  std::vector<double> weights(rec.participants.size(),
                              1.0 / static_cast<double>(rec.participants.size()));
  if (cfg.variant != Variant::NoIpwd) {
    const std::vector<ClientWeight> cw =
        client_weights(ctx.server.ledger, histograms, ctx.global_histogram, cfg.ipwd,
                       rec.participants);
    for (std::size_t k = 0; k < cw.size(); ++k) weights[k] = cw[k].normalized;
  }
  rec.client_weights_normalized = weights;

  // pseudo batch, with missing-category completion under the pre-update
  // teacher ensemble
  std::vector<int> labels(cfg.pseudo_batch);
  {
    Rng rng = make_rng(cfg.seed, SeedTag::PseudoLabels, round_index);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(ctx.train.class_count) - 1);
    for (int& y : labels) y = pick(rng);
  }
  PseudoBatch batch = generate(ctx.server.generator, labels,
                               derive_seed(cfg.seed, SeedTag::PseudoNoise, round_index));
  {
    std::vector<const SplitModel*> teachers;
    for (std::size_t id : rec.participants) teachers.push_back(&ctx.clients[id].model);
    const std::vector<int> missing = detect_missing_classes(
        batch, teachers, weights, ctx.train.class_count);
    const std::size_t per_class =
        std::max<std::size_t>(1, cfg.pseudo_batch / ctx.train.class_count);
    batch = fill_missing(ctx.server.generator, batch, missing, per_class,
                         derive_seed(cfg.seed, SeedTag::MissingFill, round_index));
  }

  // local updates; participants are independent given the frozen global
  // model, so they may run on any number of workers
  LocalUpdateOptions opt;
  opt.epochs = cfg.local_epochs;
  opt.batch_size = cfg.local_batch;
  opt.objective.kd_weight = exchange ? cfg.kd_weight : 0.0;
  opt.objective.contrastive = cfg.contrastive;
  if (cfg.variant == Variant::NoBcl || cfg.variant == Variant::Baseline)
    opt.objective.contrastive.coefficient = 0.0;

  std::vector<LocalUpdateStats> stats(rec.participants.size());
  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min(cfg.workers, rec.participants.size()));
  const auto run_span = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      ClientState& client = ctx.clients[rec.participants[k]];
      stats[k] = local_update(client, ctx.server.global_model, ctx.train, batch, opt,
                              cfg.seed, round_index);
    }
  };
  if (n_workers == 1) {
    run_span(0, rec.participants.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (rec.participants.size() + n_workers - 1) / n_workers;
    for (std::size_t w = 0; w < n_workers; ++w) {
      const std::size_t begin = w * per;
      const std::size_t end = std::min(begin + per, rec.participants.size());
      if (begin >= end) break;
      pool.emplace_back(run_span, begin, end);
    }
    for (std::thread& t : pool) t.join();
  }
  for (const LocalUpdateStats& s : stats) {
    rec.mean_train_loss += s.mean_total;
    rec.mean_kd_loss += s.mean_kd;
    rec.mean_contrastive_loss += s.mean_contrastive;
  }
  const double inv_p = 1.0 / static_cast<double>(rec.participants.size());
  rec.mean_train_loss *= inv_p;
  rec.mean_kd_loss *= inv_p;
  rec.mean_contrastive_loss *= inv_p;

  // sample weights from the updated teachers
  std::vector<const SplitModel*> teachers;
  for (std::size_t id : rec.participants) teachers.push_back(&ctx.clients[id].model);
  if (cfg.variant == Variant::NoIpwd) {
    batch.confidence = confidence(teacher_probabilities(teachers, batch.samples), weights);
    std::fill(batch.weight.begin(), batch.weight.end(), 1.0);
  } else {
    batch.confidence = confidence(teacher_probabilities(teachers, batch.samples), weights);
    for (std::size_t j = 0; j < batch.size(); ++j)
      batch.weight[j] = sample_weight(batch.confidence[j], cfg.ipwd);
  }

  // server phase: generator steps, then distillation steps
  if (exchange) {
    for (std::size_t g = 0; g < cfg.generator_steps; ++g) {
      const GeneratorStepResult r = train_generator_step(
          ctx.server.generator, teachers, weights, cfg.pseudo_batch, cfg.generator_rate,
          derive_seed(cfg.seed, SeedTag::GeneratorStep, round_index, g));
      rec.generator_loss += r.loss;
    }
    if (cfg.generator_steps > 0)
      rec.generator_loss /= static_cast<double>(cfg.generator_steps);
    for (std::size_t d = 0; d < cfg.distill_steps; ++d)
      rec.distill_loss += server_distill_step(ctx.server.global_model, batch, teachers,
                                              weights, cfg.distill_rate);
    if (cfg.distill_steps > 0)
      rec.distill_loss /= static_cast<double>(cfg.distill_steps);
  }

  // evaluation: participants changed, everyone else keeps the cached value
  const bool eval_round =
      (round_index % cfg.eval_every) == 0 || round_index == cfg.rounds;
  if (eval_round) {
    for (std::size_t id : rec.participants)
      ctx.client_accuracy[id] = evaluate(ctx.clients[id].model, ctx.test);
    ctx.global_accuracy = evaluate(ctx.server.global_model, ctx.test);
  }
  rec.global_accuracy = ctx.global_accuracy;
  double mean = 0.0;
  for (double a : ctx.client_accuracy) mean += a;
  mean /= static_cast<double>(ctx.client_accuracy.size());
  double var = 0.0;
  for (double a : ctx.client_accuracy) var += (a - mean) * (a - mean);
  var /= static_cast<double>(ctx.client_accuracy.size());
  rec.mean_client_accuracy = mean;
  rec.std_client_accuracy = std::sqrt(var);

  const Diagnostics diag = diagnostics(ctx, batch, rec.participants, weights);
  rec.data_proportions = diag.data_proportions;
  rec.ideal_objective = diag.ideal_objective;
  rec.partial_objective = diag.partial_objective;
  rec.objective_gap = diag.objective_gap;
  rec.pseudo_label_divergence = diag.pseudo_label_divergence;

  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

/// Full experiment: tau rounds from a validated config.
inline std::vector<RoundRecord> run_experiment(FedContext& ctx) {
  std::vector<RoundRecord> records;
  records.reserve(ctx.cfg.rounds);
  for (std::size_t r = 0; r < ctx.cfg.rounds; ++r) records.push_back(run_round(ctx));
  return records;
}

inline std::vector<RoundRecord> run_experiment(const ExperimentConfig& cfg) {
  FedContext ctx = init_experiment(cfg);
  return run_experiment(ctx);
}

}  // namespace hfedckd
