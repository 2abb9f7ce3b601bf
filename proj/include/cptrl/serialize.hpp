#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cptrl/cpt.hpp"
#include "cptrl/errors.hpp"
#include "cptrl/policy.hpp"
#include "cptrl/spsa.hpp"
#include "cptrl/train.hpp"
#include "cptrl/utility.hpp"
#include "cptrl/weight.hpp"

// JSON round-trips for the value types that appear in experiment configs and
// policy checkpoints. Readers throw ConfigError with the offending field
// path; writers emit a stable field order (nlohmann::ordered_json) so output
// files are byte-reproducible.

namespace cptrl {

using json = nlohmann::ordered_json;

namespace detail_json {

inline std::string describe(const json& j) {
  std::string s = j.dump();
  if (s.size() > 60) s = s.substr(0, 57) + "...";
  return s;
}

inline const json& require(const json& j, const char* key,
                           const std::string& ctx) {
  if (!j.is_object())
    throw ConfigError(ctx + ": expected an object, got " + describe(j));
  auto it = j.find(key);
  if (it == j.end())
    throw ConfigError(ctx + ": missing field '" + key + "'");
  return *it;
}

// Rejects unknown keys so config typos fail loudly instead of silently
// falling back to defaults.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
  if (!j.is_object())
    throw ConfigError(ctx + ": expected an object, got " + describe(j));
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(ctx + ": unknown field '" + key + "'");
  }
}

template <class T>
T get_as(const json& j, const std::string& ctx) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(ctx + ": bad value " + describe(j));
  }
}

template <class T>
T field(const json& j, const char* key, const std::string& ctx) {
  return get_as<T>(require(j, key, ctx), ctx + "." + key);
}

template <class T>
T field_or(const json& j, const char* key, T fallback, const std::string& ctx) {
  if (!j.is_object())
    throw ConfigError(ctx + ": expected an object, got " + describe(j));
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return get_as<T>(*it, ctx + "." + key);
}

}  // namespace detail_json

// ---------------------------------------------------------------------------
// Utility
// ---------------------------------------------------------------------------

inline json utility_to_json(const Utility& u) {
  json j;
  switch (u.kind()) {
    case Utility::Kind::identity:
      j["kind"] = "identity";
      j["reference_point"] = u.reference_point();
      break;
    case Utility::Kind::kahneman_tversky:
      j["kind"] = "kahneman_tversky";
      j["lambda"] = u.lambda();
      j["alpha"] = u.alpha();
      j["reference_point"] = u.reference_point();
      break;
    case Utility::Kind::exponential:
      j["kind"] = "exponential";
      j["a"] = u.coef_a();
      j["b"] = u.coef_b();
      j["c"] = u.coef_c();
      j["reference_point"] = u.reference_point();
      break;
    case Utility::Kind::sqrt_shift:
      j["kind"] = "sqrt_shift";
      j["offset"] = u.offset();
      break;
    case Utility::Kind::custom:
      j["kind"] = "custom";
      j["tag"] = u.tag();
      j["reference_point"] = u.reference_point();
      break;
  }
  return j;
}

inline Utility utility_from_json(const json& j, const std::string& ctx = "utility") {
  using detail_json::field;
  using detail_json::field_or;
  if (j.is_string()) {
    std::string name = j.get<std::string>();
    if (name == "identity") return Utility::identity();
    if (name == "kahneman_tversky") return Utility::kahneman_tversky();
    throw ConfigError(ctx + ": unknown utility shorthand '" + name + "'");
  }
  std::string kind = field<std::string>(j, "kind", ctx);
  try {
    if (kind == "identity") {
      detail_json::check_keys(j, {"kind", "reference_point"}, ctx);
      return Utility::identity(field_or<double>(j, "reference_point", 0.0, ctx));
    }
    if (kind == "kahneman_tversky") {
      detail_json::check_keys(j, {"kind", "lambda", "alpha", "reference_point"}, ctx);
      return Utility::kahneman_tversky(
          field_or<double>(j, "lambda", 2.25, ctx),
          field_or<double>(j, "alpha", 0.88, ctx),
          field_or<double>(j, "reference_point", 0.0, ctx));
    }
    if (kind == "exponential") {
      detail_json::check_keys(j, {"kind", "a", "b", "c", "reference_point"}, ctx);
      return Utility::exponential(field<double>(j, "a", ctx),
                                  field<double>(j, "b", ctx),
                                  field<double>(j, "c", ctx),
                                  field_or<double>(j, "reference_point", 0.0, ctx));
    }
    if (kind == "sqrt_shift") {
      detail_json::check_keys(j, {"kind", "offset"}, ctx);
      return Utility::sqrt_shift(field<double>(j, "offset", ctx));
    }
  } catch (const ValidationError& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  if (kind == "custom")
    throw ConfigError(ctx + ": custom curves cannot be rebuilt from JSON");
  throw ConfigError(ctx + ": unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Weight
// ---------------------------------------------------------------------------

inline json weight_to_json(const Weight& w) {
  json j;
  if (!w.preset_name().empty()) {
    j["kind"] = "preset";
    j["name"] = w.preset_name();
    return j;
  }
  switch (w.kind()) {
    case Weight::Kind::identity:
      j["kind"] = "identity";
      break;
    case Weight::Kind::zero:
      j["kind"] = "zero";
      break;
    case Weight::Kind::kahneman_tversky:
      j["kind"] = "kahneman_tversky";
      j["eta"] = w.eta();
      break;
    case Weight::Kind::prelec:
      j["kind"] = "prelec";
      j["eta"] = w.eta();
      break;
    case Weight::Kind::piecewise_affine: {
      auto pw = w.affine_form();
      j["kind"] = "piecewise_affine";
      j["breakpoints"] = pw->breakpoints;
      j["slopes"] = pw->slopes;
      j["intercepts"] = pw->intercepts;
      break;
    }
    case Weight::Kind::complement:
      j["kind"] = "complement";
      j["inner"] = weight_to_json(*w.inner());
      break;
  }
  return j;
}

inline Weight weight_from_json(const json& j, const std::string& ctx = "weight") {
  using detail_json::field;
  if (j.is_string()) {
    std::string name = j.get<std::string>();
    if (name == "identity") return Weight::identity();
    if (name == "zero") return Weight::zero();
    try {
      return Weight::preset(name);
    } catch (const ValidationError&) {
      throw ConfigError(ctx + ": unknown weight shorthand '" + name + "'");
    }
  }
  std::string kind = field<std::string>(j, "kind", ctx);
  try {
    if (kind == "identity") return Weight::identity();
    if (kind == "zero") return Weight::zero();
    if (kind == "kahneman_tversky") {
      detail_json::check_keys(j, {"kind", "eta"}, ctx);
      return Weight::kahneman_tversky(field<double>(j, "eta", ctx));
    }
    if (kind == "prelec") {
      detail_json::check_keys(j, {"kind", "eta"}, ctx);
      return Weight::prelec(field<double>(j, "eta", ctx));
    }
    if (kind == "preset") {
      detail_json::check_keys(j, {"kind", "name"}, ctx);
      return Weight::preset(field<std::string>(j, "name", ctx));
    }
    if (kind == "piecewise_affine") {
      detail_json::check_keys(j, {"kind", "breakpoints", "slopes", "intercepts"}, ctx);
      auto breakpoints = field<std::vector<double>>(j, "breakpoints", ctx);
      auto slopes = field<std::vector<double>>(j, "slopes", ctx);
      if (j.contains("intercepts"))
        return Weight::piecewise_affine(
            std::move(breakpoints), std::move(slopes),
            field<std::vector<double>>(j, "intercepts", ctx));
      return Weight::piecewise_affine(std::move(breakpoints), std::move(slopes));
    }
    if (kind == "complement")
      return Weight::complement(
          weight_from_json(detail_json::require(j, "inner", ctx), ctx + ".inner"));
  } catch (const ValidationError& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  throw ConfigError(ctx + ": unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// CptSpec
// ---------------------------------------------------------------------------

inline json cpt_spec_to_json(const CptSpec& s) {
  json j;
  j["utility"] = utility_to_json(s.utility);
  j["w_plus"] = weight_to_json(s.w_plus);
  j["w_minus"] = weight_to_json(s.w_minus);
  return j;
}

inline CptSpec cpt_spec_from_json(const json& j, const std::string& ctx = "spec") {
  detail_json::check_keys(j, {"utility", "w_plus", "w_minus"}, ctx);
  CptSpec s;
  if (j.contains("utility")) s.utility = utility_from_json(j["utility"], ctx + ".utility");
  if (j.contains("w_plus")) s.w_plus = weight_from_json(j["w_plus"], ctx + ".w_plus");
  if (j.contains("w_minus")) s.w_minus = weight_from_json(j["w_minus"], ctx + ".w_minus");
  return s;
}

// ---------------------------------------------------------------------------
// HistoryAbstraction
// ---------------------------------------------------------------------------

inline json abstraction_to_json(const HistoryAbstraction& h) {
  json j;
  j["kind"] = history_kind_name(h.kind);
  if (h.kind == HistoryKind::sum_augmented) j["bin_edges"] = h.bin_edges;
  return j;
}

inline HistoryAbstraction abstraction_from_json(const json& j,
                                                const std::string& ctx = "abstraction") {
  std::string kind;
  if (j.is_string())
    kind = j.get<std::string>();
  else
    kind = detail_json::field<std::string>(j, "kind", ctx);
  if (kind == "stationary") return HistoryAbstraction::stationary();
  if (kind == "markov") return HistoryAbstraction::markov();
  if (kind == "full_history") return HistoryAbstraction::full_history();
  if (kind == "sum_augmented") {
    if (j.is_string())
      throw ConfigError(ctx + ": sum_augmented needs a bin_edges array");
    detail_json::check_keys(j, {"kind", "bin_edges"}, ctx);
    try {
      return HistoryAbstraction::sum_augmented(
          detail_json::field<std::vector<double>>(j, "bin_edges", ctx));
    } catch (const ArgumentError& e) {
      throw ConfigError(ctx + ": " + e.what());
    }
  }
  throw ConfigError(ctx + ": unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// PolicyParams (checkpoints)
// ---------------------------------------------------------------------------

inline json policy_params_to_json(const PolicyParams& p) {
  json j;
  j["kind"] = policy_kind_name(p.kind);
  if (p.is_discrete()) {
    j["abstraction"] = abstraction_to_json(p.abstraction);
    j["n_rows"] = p.n_rows;
    j["n_actions"] = p.n_actions;
    if (p.kind == PolicyKind::softmax_tanh)
      j["alpha_exploration"] = p.alpha_exploration;
  } else {
    j["layer_sizes"] = p.layer_sizes;
    j["obs_scale"] = p.obs_scale;
  }
  j["theta"] = p.theta;
  return j;
}

inline PolicyParams policy_params_from_json(const json& j,
                                            const std::string& ctx = "policy") {
  using detail_json::field;
  using detail_json::field_or;
  std::string kind = field<std::string>(j, "kind", ctx);
  PolicyParams p;
  try {
    if (kind == "gaussian_mlp") {
      detail_json::check_keys(j, {"kind", "layer_sizes", "obs_scale", "theta"}, ctx);
      p.kind = PolicyKind::gaussian_mlp;
      p.layer_sizes = field<std::vector<int>>(j, "layer_sizes", ctx);
      p.obs_scale = field<std::vector<double>>(j, "obs_scale", ctx);
      p.theta = field<std::vector<double>>(j, "theta", ctx);
      p.validate();
      return p;
    }
    PolicyKind pk;
    if (kind == "softmax_tabular")
      pk = PolicyKind::softmax_tabular;
    else if (kind == "softmax_tanh")
      pk = PolicyKind::softmax_tanh;
    else if (kind == "bernoulli_direct")
      pk = PolicyKind::bernoulli_direct;
    else
      throw ConfigError(ctx + ": unknown kind '" + kind + "'");
    detail_json::check_keys(
        j, {"kind", "abstraction", "n_rows", "n_actions", "alpha_exploration", "theta"},
        ctx);
    p = PolicyParams::table(
        abstraction_from_json(detail_json::require(j, "abstraction", ctx),
                              ctx + ".abstraction"),
        pk, field<int>(j, "n_rows", ctx), field<int>(j, "n_actions", ctx));
    p.alpha_exploration = field_or<double>(j, "alpha_exploration", 1.0, ctx);
    if (j.contains("theta")) {
      auto theta = field<std::vector<double>>(j, "theta", ctx);
      if (theta.size() != p.theta.size())
        throw ConfigError(ctx + ".theta: expected " + std::to_string(p.theta.size()) +
                          " entries, got " + std::to_string(theta.size()));
      p.theta = std::move(theta);
    }
    p.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(ctx + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// TrainConfig / SpsaConfig
// ---------------------------------------------------------------------------

inline const char* phi_method_name(PhiMethod m) {
  switch (m) {
    case PhiMethod::quantile: return "quantile";
    case PhiMethod::piecewise_affine: return "piecewise_affine";
    case PhiMethod::exact_oracle: return "exact_oracle";
  }
  return "?";
}

inline PhiMethod phi_method_from_name(const std::string& s, const std::string& ctx) {
  if (s == "quantile") return PhiMethod::quantile;
  if (s == "piecewise_affine") return PhiMethod::piecewise_affine;
  if (s == "exact_oracle") return PhiMethod::exact_oracle;
  throw ConfigError(ctx + ": unknown phi method '" + s + "'");
}

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "sgd";
}

inline OptimizerKind optimizer_from_name(const std::string& s, const std::string& ctx) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError(ctx + ": unknown optimizer '" + s + "'");
}

inline json train_config_to_json(const TrainConfig& c) {
  json j;
  j["batch_n"] = c.batch_n;
  j["iterations"] = c.iterations;
  j["step_size"] = c.step_size;
  j["optimizer"] = optimizer_name(c.optimizer);
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["entropy_weight"] = c.entropy_weight;
  j["entropy_decay"] = c.entropy_decay;
  j["phi_method"] = phi_method_name(c.phi_method);
  j["literal_single_scoring"] = c.literal_single_scoring;
  j["pretrain_iterations"] = c.pretrain_iterations;
  j["tanh_alpha_growth"] = c.tanh_alpha_growth;
  j["seed"] = c.seed;
  j["snapshot_every"] = c.snapshot_every;
  return j;
}

inline TrainConfig train_config_from_json(const json& j,
                                          const std::string& ctx = "train") {
  using detail_json::field_or;
  detail_json::check_keys(
      j,
      {"batch_n", "iterations", "step_size", "optimizer", "adam_beta1",
       "adam_beta2", "adam_eps", "entropy_weight", "entropy_decay", "phi_method",
       "literal_single_scoring", "pretrain_iterations", "tanh_alpha_growth",
       "seed", "snapshot_every"},
      ctx);
  TrainConfig c;
  c.batch_n = field_or<int>(j, "batch_n", c.batch_n, ctx);
  c.iterations = field_or<int>(j, "iterations", c.iterations, ctx);
  c.step_size = field_or<double>(j, "step_size", c.step_size, ctx);
  if (j.contains("optimizer"))
    c.optimizer = optimizer_from_name(
        detail_json::get_as<std::string>(j["optimizer"], ctx + ".optimizer"),
        ctx + ".optimizer");
  c.adam_beta1 = field_or<double>(j, "adam_beta1", c.adam_beta1, ctx);
  c.adam_beta2 = field_or<double>(j, "adam_beta2", c.adam_beta2, ctx);
  c.adam_eps = field_or<double>(j, "adam_eps", c.adam_eps, ctx);
  c.entropy_weight = field_or<double>(j, "entropy_weight", c.entropy_weight, ctx);
  c.entropy_decay = field_or<double>(j, "entropy_decay", c.entropy_decay, ctx);
  if (j.contains("phi_method"))
    c.phi_method = phi_method_from_name(
        detail_json::get_as<std::string>(j["phi_method"], ctx + ".phi_method"),
        ctx + ".phi_method");
  c.literal_single_scoring =
      field_or<bool>(j, "literal_single_scoring", c.literal_single_scoring, ctx);
  c.pretrain_iterations =
      field_or<int>(j, "pretrain_iterations", c.pretrain_iterations, ctx);
  c.tanh_alpha_growth =
      field_or<double>(j, "tanh_alpha_growth", c.tanh_alpha_growth, ctx);
  c.seed = field_or<std::uint64_t>(j, "seed", c.seed, ctx);
  c.snapshot_every = field_or<int>(j, "snapshot_every", c.snapshot_every, ctx);
  c.validate();
  return c;
}

inline json spsa_config_to_json(const SpsaConfig& c) {
  json j;
  j["batch_n"] = c.batch_n;
  j["iterations"] = c.iterations;
  j["step_initial"] = c.step_initial;
  j["step_exponent"] = c.step_exponent;
  j["delta_initial"] = c.delta_initial;
  j["delta_exponent"] = c.delta_exponent;
  j["seed"] = c.seed;
  j["snapshot_every"] = c.snapshot_every;
  return j;
}

inline SpsaConfig spsa_config_from_json(const json& j,
                                        const std::string& ctx = "spsa") {
  using detail_json::field_or;
  detail_json::check_keys(j,
                          {"batch_n", "iterations", "step_initial", "step_exponent",
                           "delta_initial", "delta_exponent", "seed", "snapshot_every"},
                          ctx);
  SpsaConfig c;
  c.batch_n = field_or<int>(j, "batch_n", c.batch_n, ctx);
  c.iterations = field_or<int>(j, "iterations", c.iterations, ctx);
  c.step_initial = field_or<double>(j, "step_initial", c.step_initial, ctx);
  c.step_exponent = field_or<double>(j, "step_exponent", c.step_exponent, ctx);
  c.delta_initial = field_or<double>(j, "delta_initial", c.delta_initial, ctx);
  c.delta_exponent = field_or<double>(j, "delta_exponent", c.delta_exponent, ctx);
  c.seed = field_or<std::uint64_t>(j, "seed", c.seed, ctx);
  c.snapshot_every = field_or<int>(j, "snapshot_every", c.snapshot_every, ctx);
  c.validate();
  return c;
}

}  // namespace cptrl
