#pragma once
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icrl/errors.hpp"

namespace icrl {

// Per-step training metrics. Means that have no samples this step (critic
// reward without critic samples, calibration weight without critique-guided
// tokens) are recorded as absent, never as zero.
struct StepMetrics {
  std::int64_t step = 0;
  double solver_mean_reward = 0.0;
  std::optional<double> critic_mean_reward;
  std::optional<double> mean_w;  // mean of min(w_t, w_max) over critique-guided tokens
  double grad_norm = 0.0;
  int solver_samples = 0;
  int critic_samples = 0;
};

struct EvalPoint {
  std::int64_t step = 0;
  double round1_success = 0.0;
};

namespace detail {

inline nlohmann::json metrics_json(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["solver_mean_reward"] = m.solver_mean_reward;
  j["critic_mean_reward"] = m.critic_mean_reward ? nlohmann::json(*m.critic_mean_reward)
                                                 : nlohmann::json(nullptr);
  j["mean_w"] = m.mean_w ? nlohmann::json(*m.mean_w) : nlohmann::json(nullptr);
  j["grad_norm"] = m.grad_norm;
  j["solver_samples"] = m.solver_samples;
  j["critic_samples"] = m.critic_samples;
  return j;
}

}  // namespace detail

inline void write_metrics_jsonl(const std::string& path, const std::vector<StepMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open metrics file for writing: " + path);
  for (const StepMetrics& m : metrics) out << detail::metrics_json(m).dump() << "\n";
}

inline std::vector<StepMetrics> read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file: " + path);
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    StepMetrics m;
    m.step = j.at("step").get<std::int64_t>();
    m.solver_mean_reward = j.at("solver_mean_reward").get<double>();
    if (!j.at("critic_mean_reward").is_null())
      m.critic_mean_reward = j.at("critic_mean_reward").get<double>();
    if (!j.at("mean_w").is_null()) m.mean_w = j.at("mean_w").get<double>();
    m.grad_norm = j.at("grad_norm").get<double>();
    m.solver_samples = j.at("solver_samples").get<int>();
    m.critic_samples = j.at("critic_samples").get<int>();
    out.push_back(m);
  }
  return out;
}

// Flat table for plotting; absent values become empty cells.
inline void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open metrics csv for writing: " + path);
  out << "step,solver_mean_reward,critic_mean_reward,mean_w,grad_norm,solver_samples,critic_samples\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const StepMetrics& m : metrics) {
    out << m.step << "," << num(m.solver_mean_reward) << ","
        << (m.critic_mean_reward ? num(*m.critic_mean_reward) : "") << ","
        << (m.mean_w ? num(*m.mean_w) : "") << "," << num(m.grad_norm) << ","
        << m.solver_samples << "," << m.critic_samples << "\n";
  }
}

inline void write_eval_csv(const std::string& path, const std::vector<EvalPoint>& evals) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open eval csv for writing: " + path);
  out << "step,round1_success\n";
  char buf[40];
  for (const EvalPoint& e : evals) {
    std::snprintf(buf, sizeof buf, "%.17g", e.round1_success);
    out << e.step << "," << buf << "\n";
  }
}

// Mean of the last `window` defined mean_w values at or before `step`.
// Returns nothing when no defined value exists in range.
inline std::optional<double> mean_w_moving_average(const std::vector<StepMetrics>& metrics,
                                                   std::int64_t step, int window) {
  double sum = 0.0;
  int n = 0;
  for (auto it = metrics.rbegin(); it != metrics.rend() && n < window; ++it) {
    if (it->step > step) continue;
    if (it->mean_w) {
      sum += *it->mean_w;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace icrl
