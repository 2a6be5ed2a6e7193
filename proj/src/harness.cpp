#include "allmatch/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace allmatch {

namespace {

using nlohmann::json;

constexpr double kLogClamp = 1e-12;

json matrix_to_json(const Matrix& m) { return m.data(); }

void matrix_from_json(const json& j, Matrix& m) {
  std::vector<double> flat = j.get<std::vector<double>>();
  if (flat.size() != m.size())
    throw std::runtime_error("checkpoint: parameter array size mismatch");
  m.data() = std::move(flat);
}

json model_to_json(const Mlp& model) {
  json layers = json::array();
  for (const DenseLayer& layer : model.hidden())
    layers.push_back(
        {{"weight", matrix_to_json(layer.weight)}, {"bias", layer.bias}});
  return {{"hidden", layers},
          {"classifier", matrix_to_json(model.classifier())}};
}

void model_from_json(const json& j, Mlp& model) {
  const json& layers = j.at("hidden");
  if (layers.size() != model.hidden().size())
    throw std::runtime_error("checkpoint: layer count mismatch");
  for (std::size_t l = 0; l < model.hidden().size(); ++l) {
    matrix_from_json(layers[l].at("weight"), model.hidden()[l].weight);
    std::vector<double> bias = layers[l].at("bias").get<std::vector<double>>();
    if (bias.size() != model.hidden()[l].bias.size())
      throw std::runtime_error("checkpoint: bias size mismatch");
    model.hidden()[l].bias = std::move(bias);
  }
  matrix_from_json(j.at("classifier"), model.classifier());
}

json gradients_to_json(const Gradients& g) {
  json layers = json::array();
  for (std::size_t l = 0; l < g.hidden_weights.size(); ++l)
    layers.push_back({{"weight", matrix_to_json(g.hidden_weights[l])},
                      {"bias", g.hidden_biases[l]}});
  return {{"hidden", layers}, {"classifier", matrix_to_json(g.classifier)}};
}

void gradients_from_json(const json& j, Gradients& g) {
  const json& layers = j.at("hidden");
  if (layers.size() != g.hidden_weights.size())
    throw std::runtime_error("checkpoint: velocity layer count mismatch");
  for (std::size_t l = 0; l < g.hidden_weights.size(); ++l) {
    matrix_from_json(layers[l].at("weight"), g.hidden_weights[l]);
    std::vector<double> bias = layers[l].at("bias").get<std::vector<double>>();
    if (bias.size() != g.hidden_biases[l].size())
      throw std::runtime_error("checkpoint: velocity bias size mismatch");
    g.hidden_biases[l] = std::move(bias);
  }
  matrix_from_json(j.at("classifier"), g.classifier);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

int argmax_row(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) -
                          row.begin());
}

}  // namespace

TrainingAbort::TrainingAbort(std::int64_t iteration_in, double loss_s_in,
                             double loss_u_in, double loss_b_in)
    : std::runtime_error("non-finite loss at iteration " +
                         std::to_string(iteration_in) + " (loss_s=" +
                         fmt(loss_s_in) + ", loss_u=" + fmt(loss_u_in) +
                         ", loss_b=" + fmt(loss_b_in) + ")"),
      iteration(iteration_in),
      loss_s(loss_s_in),
      loss_u(loss_u_in),
      loss_b(loss_b_in) {}

double supervised_loss(std::span<const ProbVector> predictions,
                       std::span<const int> labels) {
  if (predictions.empty())
    throw std::invalid_argument("supervised_loss: empty batch");
  if (predictions.size() != labels.size())
    throw std::invalid_argument("supervised_loss: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= predictions[i].size())
      throw std::invalid_argument("supervised_loss: label out of range");
    total -= std::log(std::max(predictions[i][y], kLogClamp));
  }
  return total / static_cast<double>(predictions.size());
}

double unsupervised_loss(std::span<const ProbVector> p_tilde,
                         std::span<const ProbVector> q,
                         std::span<const double> weights) {
  if (p_tilde.empty())
    throw std::invalid_argument("unsupervised_loss: empty batch");
  if (p_tilde.size() != q.size() || p_tilde.size() != weights.size())
    throw std::invalid_argument("unsupervised_loss: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p_tilde.size(); ++i) {
    const int pseudo = p_tilde[i].argmax();
    total -= weights[i] * std::log(std::max(q[i][pseudo], kLogClamp));
  }
  return total / static_cast<double>(p_tilde.size());
}

Trainer::Trainer(const TrainConfig& config, std::uint64_t seed)
    : config_(config),
      seed_(seed),
      dataset_(build_dataset(config.dataset, seed)),
      da_(dataset_.num_classes, config.ema_momentum),
      bcc_(dataset_.num_classes, config.ema_momentum,
           std::min(config.candidate_cap, dataset_.num_classes)) {
  config_.validate();
  batches_ = std::make_unique<BatchIterator>(
      dataset_, config_.batch_labeled, config_.batch_unlabeled,
      config_.dataset.augment, seed_);
  std::mt19937_64 init_rng = make_rng(seed_, RngStream::kModelInit);
  model_ = Mlp::random(dataset_.input_dim, config_.model.hidden_dims,
                       dataset_.num_classes, init_rng);
  optimizer_ = std::make_unique<SgdOptimizer>(model_, config_.optimizer.base_lr,
                                              config_.optimizer.momentum,
                                              config_.total_iterations);
  ema_ = std::make_unique<EmaModel>(model_, config_.model_ema_decay);
  StrategyConfig scfg;
  scfg.token = config_.strategy;
  scfg.num_classes = dataset_.num_classes;
  scfg.momentum = config_.ema_momentum;
  scfg.fixmatch_tau = config_.fixmatch_tau;
  scfg.softmatch_n = config_.softmatch_n;
  scfg.clamp_range = config_.clamp_range;
  strategy_ = make_strategy(scfg);
}

MetricsRecord Trainer::step() {
  if (done())
    throw std::logic_error("Trainer::step: training already finished");
  return run_iteration(iteration_ + 1);
}

MetricsRecord Trainer::run_iteration(std::int64_t t) {
  const TrainingBatch batch = batches_->at(t);
  const int num_classes = dataset_.num_classes;
  const std::size_t batch_l = batch.labeled.labels.size();

  MetricsRecord record;
  record.iteration = t;
  record.learning_rate = optimizer_->learning_rate();

  // Supervised branch.
  ForwardCache cache_l;
  const ForwardResult out_l = forward(model_, batch.labeled.inputs, &cache_l);
  const std::vector<ProbVector> probs_l = softmax_rows(out_l.logits);
  record.loss_s = supervised_loss(probs_l, batch.labeled.labels);

  Matrix dlogits_l(batch_l, num_classes);
  for (std::size_t i = 0; i < batch_l; ++i) {
    const int y = batch.labeled.labels[i];
    if (probs_l[i][y] <= kLogClamp) continue;  // clamped loss region
    for (int c = 0; c < num_classes; ++c)
      dlogits_l(i, c) =
          (probs_l[i][c] - (c == y ? 1.0 : 0.0)) / static_cast<double>(batch_l);
  }
  Gradients grads = backward(model_, cache_l, dlogits_l);

  // Unsupervised branch.
  const std::size_t batch_u = batch.unlabeled.size();
  if (batch_u > 0) {
    const ForwardResult weak_out = forward(model_, batch.unlabeled.weak);
    const std::vector<ProbVector> raw = softmax_rows(weak_out.logits);

    if (probe_weak_view_gradients) {
      // Instrumentation: push garbage gradients through a weak-view backward
      // pass and drop the result; training state must be unaffected.
      ForwardCache probe_cache;
      forward(model_, batch.unlabeled.weak, &probe_cache);
      Matrix garbage(batch_u, num_classes, 1.0);
      (void)backward(model_, probe_cache, garbage);
    }

    da_.update(mean_prob(raw));
    std::vector<ProbVector> aligned;
    aligned.reserve(batch_u);
    for (const ProbVector& p : raw) aligned.push_back(da_.apply(p));

    const std::vector<double> norms = ema_->classifier_weight_norms();
    strategy_->update({raw, aligned, norms});

    std::vector<double> weights(batch_u);
    std::vector<char> selected(batch_u);
    for (std::size_t i = 0; i < batch_u; ++i) {
      weights[i] = strategy_->weight(aligned[i]);
      selected[i] = strategy_->selected(aligned[i]) ? 1 : 0;
    }

    bcc_.update_mu(aligned);
    std::vector<int> ks(batch_u);
    for (std::size_t i = 0; i < batch_u; ++i)
      ks[i] = bcc_.select_k(aligned[i], selected[i]);

    ForwardCache cache_s;
    const ForwardResult strong_out =
        forward(model_, batch.unlabeled.strong, &cache_s);
    const std::vector<ProbVector> q = softmax_rows(strong_out.logits);

    std::vector<DivisionPair> divisions;
    divisions.reserve(batch_u);
    for (std::size_t i = 0; i < batch_u; ++i)
      divisions.push_back(binary_division(aligned[i], q[i], ks[i]));

    record.loss_u = unsupervised_loss(aligned, q, weights);
    record.loss_b = bcc_loss(divisions);

    // Gradients flow only through the strong view; the weak view and the
    // divisions derived from it are fixed targets.
    const bool use_u = config_.lambda_u > 0.0;
    const bool use_b = config_.lambda_b > 0.0;
    if (use_u || use_b) {
      Matrix dlogits_s(batch_u, num_classes);
      const double inv_bu = 1.0 / static_cast<double>(batch_u);
      for (std::size_t i = 0; i < batch_u; ++i) {
        if (use_u && weights[i] > 0.0) {
          const int pseudo = aligned[i].argmax();
          if (q[i][pseudo] > kLogClamp) {
            const double scale = config_.lambda_u * weights[i] * inv_bu;
            for (int c = 0; c < num_classes; ++c)
              dlogits_s(i, c) +=
                  scale * (q[i][c] - (c == pseudo ? 1.0 : 0.0));
          }
        }
        if (use_b) {
          const std::vector<double> bgrad = bcc_logit_grad(q[i], divisions[i]);
          const double scale = config_.lambda_b * inv_bu;
          for (int c = 0; c < num_classes; ++c)
            dlogits_s(i, c) += scale * bgrad[c];
        }
      }
      grads.add(backward(model_, cache_s, dlogits_s));
    }

    // Metrics against hidden truth (never visible to the losses above).
    record.tau_global = strategy_->threshold_indicator();
    record.class_thresholds = strategy_->class_threshold_vector();
    if (record.class_thresholds.empty())
      record.class_thresholds.assign(num_classes, record.tau_global);
    std::size_t n_selected = 0, selected_correct = 0, dropped_correct = 0;
    std::size_t top5_correct = 0, binary_correct = 0;
    double k_sum = 0.0;
    const int topk = std::min(5, num_classes);
    for (std::size_t i = 0; i < batch_u; ++i) {
      const int truth = batch.unlabeled.hidden_truth[i];
      const bool correct = aligned[i].argmax() == truth;
      if (selected[i]) {
        ++n_selected;
        selected_correct += correct;
      } else {
        dropped_correct += correct;
      }
      const std::vector<int> top = topk_indices(aligned[i], topk);
      top5_correct += std::count(top.begin(), top.end(), truth) > 0;
      const std::vector<int>& cand = divisions[i].weak.candidate_set;
      binary_correct += std::count(cand.begin(), cand.end(), truth) > 0;
      k_sum += ks[i];
    }
    const double bu = static_cast<double>(batch_u);
    record.utilization_ratio = static_cast<double>(n_selected) / bu;
    record.selected_pl_accuracy =
        n_selected == 0 ? 0.0
                        : static_cast<double>(selected_correct) /
                              static_cast<double>(n_selected);
    record.dropped_pl_accuracy =
        n_selected == batch_u
            ? 0.0
            : static_cast<double>(dropped_correct) /
                  static_cast<double>(batch_u - n_selected);
    record.top5_pl_accuracy = static_cast<double>(top5_correct) / bu;
    record.binary_pl_accuracy = static_cast<double>(binary_correct) / bu;
    record.mean_k = k_sum / bu;
  } else {
    record.tau_global = strategy_->threshold_indicator();
    record.class_thresholds.assign(num_classes, record.tau_global);
  }

  record.loss_total = record.loss_s + config_.lambda_u * record.loss_u +
                      config_.lambda_b * record.loss_b;
  if (!std::isfinite(record.loss_total) || t == debug_abort_at)
    throw TrainingAbort(t, record.loss_s, record.loss_u, record.loss_b);

  optimizer_->step(model_, grads);
  ema_->update(model_);
  iteration_ = t;
  return record;
}

double test_accuracy(const Mlp& model, const SslDataset& dataset) {
  if (dataset.test.empty())
    throw std::invalid_argument("test_accuracy: empty test split");
  Matrix inputs(dataset.test.size(), dataset.input_dim);
  for (std::size_t i = 0; i < dataset.test.size(); ++i)
    for (int j = 0; j < dataset.input_dim; ++j)
      inputs(i, j) = dataset.test[i].features[j];
  const ForwardResult out = forward(model, inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.test.size(); ++i)
    correct += argmax_row(out.logits.row(i)) == dataset.test[i].label;
  return static_cast<double>(correct) /
         static_cast<double>(dataset.test.size());
}

double Trainer::evaluate(bool use_ema) const {
  return test_accuracy(use_ema ? ema_->shadow() : model_, dataset_);
}

json Trainer::checkpoint() const {
  json j;
  j["format"] = "allmatch-checkpoint-v1";
  j["config"] = config_.to_json();
  j["seed"] = seed_;
  j["iteration"] = iteration_;
  j["cursor"] = {{"next_iteration", iteration_ + 1},
                 {"unlabeled_position", iteration_ * config_.batch_unlabeled}};
  j["model"] = model_to_json(model_);
  j["optimizer"] = {{"step", optimizer_->iteration()},
                    {"velocity", gradients_to_json(optimizer_->velocity())}};
  j["ema"] = {{"decay", ema_->decay()},
              {"shadow", model_to_json(ema_->shadow())}};
  j["da"] = {{"running_mean", da_.running_mean().values()},
             {"target", da_.target().values()},
             {"momentum", da_.momentum()}};
  j["bcc"] = {{"mu", bcc_.mu()},
              {"momentum", bcc_.momentum()},
              {"cap", bcc_.cap()}};
  j["strategy"] = {{"name", std::string(strategy_->name())},
                   {"state", strategy_->state_json()}};
  return j;
}

void Trainer::restore(const json& ckpt) {
  if (ckpt.at("format").get<std::string>() != "allmatch-checkpoint-v1")
    throw std::runtime_error("checkpoint: unknown format");
  if (ckpt.at("seed").get<std::uint64_t>() != seed_)
    throw std::runtime_error("checkpoint: seed mismatch");
  iteration_ = ckpt.at("iteration").get<std::int64_t>();
  model_from_json(ckpt.at("model"), model_);
  optimizer_->set_iteration(ckpt.at("optimizer").at("step").get<std::int64_t>());
  gradients_from_json(ckpt.at("optimizer").at("velocity"),
                      optimizer_->velocity());
  model_from_json(ckpt.at("ema").at("shadow"), ema_->shadow());
  da_ = DaState(
      ProbVector(ckpt.at("da").at("running_mean").get<std::vector<double>>()),
      ProbVector(ckpt.at("da").at("target").get<std::vector<double>>()),
      ckpt.at("da").at("momentum").get<double>());
  bcc_.restore_mu(ckpt.at("bcc").at("mu").get<std::vector<double>>());
  const json& strat = ckpt.at("strategy");
  if (strat.at("name").get<std::string>() != strategy_->name())
    throw std::runtime_error("checkpoint: strategy mismatch");
  strategy_->restore_state(strat.at("state"));
}

std::unique_ptr<Trainer> trainer_from_checkpoint(const json& ckpt) {
  const TrainConfig config = TrainConfig::from_json(ckpt.at("config"));
  auto trainer = std::make_unique<Trainer>(
      config, ckpt.at("seed").get<std::uint64_t>());
  trainer->restore(ckpt);
  return trainer;
}

void write_metrics_header(std::ostream& out) {
  out << "iteration,loss_s,loss_u,loss_b,loss_total,lr,tau_global,util_ratio,"
         "sel_pl_acc,drop_pl_acc,top5_pl_acc,binary_pl_acc,mean_k,test_acc\n";
}

void write_metrics_row(std::ostream& out, const MetricsRecord& r) {
  out << r.iteration << ',' << fmt(r.loss_s) << ',' << fmt(r.loss_u) << ','
      << fmt(r.loss_b) << ',' << fmt(r.loss_total) << ','
      << fmt(r.learning_rate) << ',' << fmt(r.tau_global) << ','
      << fmt(r.utilization_ratio) << ',' << fmt(r.selected_pl_accuracy) << ','
      << fmt(r.dropped_pl_accuracy) << ',' << fmt(r.top5_pl_accuracy) << ','
      << fmt(r.binary_pl_accuracy) << ',' << fmt(r.mean_k) << ',';
  if (r.test_accuracy) out << fmt(*r.test_accuracy);
  out << '\n';
}

std::vector<MetricsRecord> drive(Trainer& trainer, const DriveOptions& options) {
  std::vector<MetricsRecord> records;
  const std::int64_t total = trainer.config().total_iterations;
  const std::int64_t log_every = trainer.config().log_every;
  const std::int64_t eval_every = trainer.config().eval_every;
  while (!trainer.done() &&
         (options.stop_at == 0 || trainer.iteration() < options.stop_at)) {
    MetricsRecord record = trainer.step();
    const std::int64_t t = record.iteration;
    const bool is_final = t == total;
    if (t % log_every == 0 || is_final) {
      if (t % eval_every == 0 || is_final)
        record.test_accuracy = trainer.evaluate();
      if (options.metrics_csv) {
        write_metrics_row(*options.metrics_csv, record);
        options.metrics_csv->flush();
      }
      records.push_back(std::move(record));
    }
    if (!options.checkpoint_path.empty() && options.checkpoint_every > 0 &&
        t % options.checkpoint_every == 0 && !trainer.done()) {
      std::ofstream out(options.checkpoint_path);
      out << trainer.checkpoint().dump();
    }
  }
  if (!options.checkpoint_path.empty()) {
    std::ofstream out(options.checkpoint_path);
    out << trainer.checkpoint().dump();
  }
  return records;
}

RunOutcome run_single(const TrainConfig& config, std::uint64_t seed,
                      std::ostream* metrics_csv) {
  RunOutcome outcome;
  Trainer trainer(config, seed);
  DriveOptions options;
  options.metrics_csv = metrics_csv;
  try {
    outcome.records = drive(trainer, options);
  } catch (const std::exception& failure) {
    outcome.aborted = true;
    outcome.abort_reason = failure.what();
    return outcome;
  }
  if (!outcome.records.empty() && outcome.records.back().test_accuracy)
    outcome.final_test_accuracy = *outcome.records.back().test_accuracy;
  return outcome;
}

ExperimentSummary run_experiment(const TrainConfig& config,
                                 const std::vector<std::uint64_t>& seeds,
                                 const std::string& out_dir,
                                 std::int64_t stop_at) {
  if (seeds.empty())
    throw std::invalid_argument("run_experiment: no seeds given");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  ExperimentSummary summary;
  std::vector<double> finals;
  for (std::uint64_t seed : seeds) {
    SeedResult result;
    result.seed = seed;
    std::ofstream csv;
    std::ostream* csv_ptr = nullptr;
    if (!out_dir.empty()) {
      result.metrics_path =
          out_dir + "/metrics_seed" + std::to_string(seed) + ".csv";
      result.checkpoint_path =
          out_dir + "/checkpoint_seed" + std::to_string(seed) + ".json";
      csv.open(result.metrics_path);
      write_metrics_header(csv);
      csv_ptr = &csv;
    }
    try {
      Trainer trainer(config, seed);
      DriveOptions options;
      options.metrics_csv = csv_ptr;
      options.stop_at = stop_at;
      options.checkpoint_path = result.checkpoint_path;
      options.checkpoint_every = config.checkpoint_every;
      std::vector<MetricsRecord> records = drive(trainer, options);
      if (!records.empty() && records.back().test_accuracy)
        result.final_test_accuracy = *records.back().test_accuracy;
      finals.push_back(result.final_test_accuracy);
    } catch (const std::exception& failure) {
      // An aborted seed must not take the rest of the experiment down.
      result.failed = true;
      result.error = failure.what();
    }
    summary.seeds.push_back(std::move(result));
  }

  if (!finals.empty()) {
    double mean = 0.0;
    for (double v : finals) mean += v;
    mean /= static_cast<double>(finals.size());
    double var = 0.0;
    for (double v : finals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(finals.size());
    summary.mean_accuracy = mean;
    summary.std_accuracy = std::sqrt(var);
  }
  return summary;
}

json summary_to_json(const ExperimentSummary& summary,
                     const TrainConfig& config) {
  json seeds = json::array();
  for (const SeedResult& r : summary.seeds) {
    json s;
    s["seed"] = r.seed;
    s["failed"] = r.failed;
    if (r.failed) s["error"] = r.error;
    s["final_test_accuracy"] = r.final_test_accuracy;
    if (!r.metrics_path.empty()) s["metrics_path"] = r.metrics_path;
    if (!r.checkpoint_path.empty()) s["checkpoint_path"] = r.checkpoint_path;
    seeds.push_back(std::move(s));
  }
  return {{"config", config.to_json()},
          {"seeds", seeds},
          {"mean_accuracy", summary.mean_accuracy},
          {"std_accuracy", summary.std_accuracy}};
}

}  // namespace allmatch
