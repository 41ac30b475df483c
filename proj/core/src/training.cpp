#include "ttoreg/training.hpp"

#include <chrono>
#include <cmath>
#include <json.hpp>

#include "ttoreg/adam.hpp"
#include "ttoreg/checkpoint.hpp"
#include "ttoreg/resample.hpp"
#include "ttoreg/warp.hpp"

namespace ttoreg {

namespace {

void save_if_configured(const TrainConfig& cfg, const RegistrationNetwork& net, int epoch) {
  if (cfg.checkpoint_path.empty()) return;
  nlohmann::json meta = nlohmann::json::parse(cfg.provenance);
  meta["epoch"] = epoch;
  meta["train_seed"] = cfg.seed;
  meta["learning_rate"] = cfg.learning_rate;
  save_checkpoint(net, cfg.checkpoint_path, meta.dump());
}

// Shared epoch loop. `step(pair, grads)` returns the loss and accumulates the
// parameter gradient.
template <typename Step>
TrainResult run_training(RegistrationNetwork net, const TrainConfig& cfg, const GeneratorConfig& gen,
                         const EpochCallback& on_epoch, Step&& step) {
  cfg.validate();
  gen.validate();
  Adam<float> adam(net.param_count(), AdamConfig{cfg.learning_rate});
  std::vector<float> grads(net.param_count());
  std::vector<float> last_good(net.parameters().begin(), net.parameters().end());
  std::vector<EpochRecord> log;
  const Clock clock = steady_clock_seconds();
  const double t0 = clock();
  std::uint64_t index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (int i = 0; i < cfg.pairs_per_epoch; ++i, ++index) {
      const SyntheticPair pair = generate_pair(training_pair_seed(cfg.seed, index), gen);
      std::fill(grads.begin(), grads.end(), 0.0f);
      const double loss = step(net, pair, grads);
      bool finite = std::isfinite(loss);
      for (std::size_t k = 0; finite && k < grads.size(); ++k) finite = std::isfinite(grads[k]);
      if (!finite) {
        std::copy(last_good.begin(), last_good.end(), net.parameters().begin());
        save_if_configured(cfg, net, epoch);
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", pair " + std::to_string(i) +
                            (cfg.checkpoint_path.empty() ? std::string()
                                                         : "; last good checkpoint: " + cfg.checkpoint_path.string()));
      }
      adam.step(net.parameters(), grads);
      sum += loss;
    }
    EpochRecord rec{epoch, sum / cfg.pairs_per_epoch, clock() - t0};
    log.push_back(rec);
    std::copy(net.parameters().begin(), net.parameters().end(), last_good.begin());
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) save_if_configured(cfg, net, epoch + 1);
    if (on_epoch) on_epoch(rec);
  }
  save_if_configured(cfg, net, cfg.epochs);
  return TrainResult{std::move(net), std::move(log)};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (pairs_per_epoch < 1) throw std::invalid_argument("pairs_per_epoch must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning_rate must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  weights.validate();
}

std::string to_json_line(const EpochRecord& r) {
  return nlohmann::json{{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"wall_seconds", r.wall_seconds}}.dump();
}

std::uint64_t network_init_seed(std::uint64_t seed, NetworkRole role) {
  return derive_seed(seed, role == NetworkRole::Teacher ? 100 : 101);
}

std::uint64_t training_pair_seed(std::uint64_t seed, std::uint64_t index) {
  return derive_seed(derive_seed(seed, 200), index);
}

TrainResult pretrain_teacher(const TrainConfig& cfg, const GeneratorConfig& gen, const EpochCallback& on_epoch) {
  RegistrationNetwork net(NetworkConfig::teacher(), network_init_seed(cfg.seed, NetworkRole::Teacher),
                          NetworkRole::Teacher);
  return run_training(std::move(net), cfg, gen, on_epoch,
                      [&](const RegistrationNetwork& n, const SyntheticPair& p, std::vector<float>& g) {
                        ForwardCache<float> cache;
                        const Field3D u = n.forward(p.fixed, p.moving, &cache);
                        Field3D gu(u.shape());
                        const LossTerms t = pretrain_loss(p.fixed, p.moving, u, cfg.weights, &gu);
                        n.backward(cache, gu, g);
                        return t.total;
                      });
}

TrainResult distill_student(const RegistrationNetwork& teacher, const TrainConfig& cfg, const GeneratorConfig& gen,
                            const EpochCallback& on_epoch, const NetworkConfig& student) {
  RegistrationNetwork net(student, network_init_seed(cfg.seed, NetworkRole::Student), NetworkRole::Student);
  return run_training(std::move(net), cfg, gen, on_epoch,
                      [&](const RegistrationNetwork& n, const SyntheticPair& p, std::vector<float>& g) {
                        const Field3D u_t = teacher.forward(p.fixed, p.moving);
                        ForwardCache<float> cache;
                        const Field3D u_s = n.forward(p.fixed, p.moving, &cache);
                        Field3D gu(u_s.shape());
                        const LossTerms t = kd_loss(p.fixed, p.moving, u_t, u_s, cfg.weights, &gu);
                        n.backward(cache, gu, g);
                        return t.total;
                      });
}

Clock steady_clock_seconds() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  };
}

void TTOConfig::validate() const {
  if (max_epochs < 1) throw std::invalid_argument("tto max_epochs must be >= 1");
  if (!(max_seconds > 0.0)) throw std::invalid_argument("tto max_seconds must be > 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("tto learning_rate must be >= 0");
  weights.validate();
}

std::string to_string(StopReason r) { return r == StopReason::EpochBudget ? "epoch_budget" : "time_budget"; }

RegistrationResult tto_register(const RegistrationNetwork& net, const Volume3D& fixed, const Volume3D& moving,
                                const TTOConfig& cfg, const Clock& clock_in) {
  cfg.validate();
  require_same_shape(fixed.shape(), moving.shape(), "tto_register");
  const Clock clock = clock_in ? clock_in : steady_clock_seconds();
  const double t0 = clock();

  const auto [f, rec] = pad_or_resample_for_network(fixed, cfg.resize);
  const auto m = pad_or_resample_for_network(moving, cfg.resize).first;

  RegistrationNetwork work = net;  // the caller's network is never touched
  Adam<float> adam(work.param_count(), AdamConfig{cfg.learning_rate});
  std::vector<float> grads(work.param_count());
  std::vector<float> best(work.parameters().begin(), work.parameters().end());
  double best_loss = std::numeric_limits<double>::infinity();

  RegistrationResult res;
  while (true) {
    if (res.epochs_run >= cfg.max_epochs) {
      res.stop_reason = StopReason::EpochBudget;
      break;
    }
    if (clock() - t0 >= cfg.max_seconds) {
      res.stop_reason = StopReason::TimeBudget;
      break;
    }
    ForwardCache<float> cache;
    const Field3D u = work.forward(f, m, &cache);
    Field3D gu(u.shape());
    const double loss = tto_loss(f, m, u, cfg.weights, &gu).total;
    res.loss_trace.push_back(loss);
    ++res.epochs_run;
    if (!std::isfinite(loss)) {
      res.degraded = true;
      std::copy(best.begin(), best.end(), work.parameters().begin());
      res.stop_reason = StopReason::EpochBudget;
      break;
    }
    if (loss < best_loss) {
      best_loss = loss;
      std::copy(work.parameters().begin(), work.parameters().end(), best.begin());
    }
    std::fill(grads.begin(), grads.end(), 0.0f);
    work.backward(cache, gu, grads);
    adam.step(work.parameters(), grads);
  }

  Field3D u = work.forward(f, m);
  for (float v : u.values()) {
    if (!std::isfinite(v)) {
      res.degraded = true;
      std::copy(best.begin(), best.end(), work.parameters().begin());
      u = work.forward(f, m);
      break;
    }
  }
  res.ddf = restore_native_field(u, rec);
  res.warped = warp(moving, res.ddf);
  res.warped.set_spacing(fixed.spacing());
  res.warped.set_native(fixed.native());
  res.warped.set_opaque_header(fixed.opaque_header());
  res.seconds = clock() - t0;
  return res;
}

std::vector<RegistrationResult> register_batch(const RegistrationNetwork& net, const std::vector<PairRef>& pairs,
                                               const TTOConfig& cfg, const Clock& clock) {
  std::vector<RegistrationResult> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    try {
      if (!p.fixed || !p.moving) throw std::invalid_argument("register_batch: null volume");
      out.push_back(tto_register(net, *p.fixed, *p.moving, cfg, clock));
    } catch (const std::exception& e) {
      RegistrationResult r;
      r.degraded = true;
      r.error = e.what();
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace ttoreg
