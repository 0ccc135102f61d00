#include "twinlearn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "twinlearn/common.hpp"

namespace twinlearn {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

long long parse_int(const std::string& s, const std::string& context) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(context + ": malformed integer value '" + s + "'");
  }
  return v;
}

std::vector<int> parse_indices(const std::string& s, const std::string& context) {
  if (s == "all") return {};
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(static_cast<int>(parse_int(trim(item), context)));
  }
  if (out.empty()) throw ConfigError(context + ": empty index list");
  return out;
}

using Setter = std::function<void(ExperimentSpec&, const std::string&, const std::string&)>;

#define SET_DOUBLE(field) \
  [](ExperimentSpec& s, const std::string& v, const std::string& ctx) { s.field = parse_double(v, ctx); }
#define SET_INT(field) \
  [](ExperimentSpec& s, const std::string& v, const std::string& ctx) { \
    s.field = static_cast<int>(parse_int(v, ctx));                      \
  }

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = {
      {"surrogate.slow_dim", SET_INT(twin.slow_dim)},
      {"surrogate.fast_per_slow", SET_INT(twin.fast_per_slow)},
      {"surrogate.forcing", SET_DOUBLE(twin.forcing)},
      {"surrogate.coupling", SET_DOUBLE(twin.coupling)},
      {"surrogate.subgrid_speed", SET_DOUBLE(twin.subgrid_speed)},
      {"surrogate.subgrid_amplitude", SET_DOUBLE(twin.subgrid_amplitude)},
      {"surrogate.dt", SET_DOUBLE(twin.dt)},
      {"surrogate.hour", SET_DOUBLE(twin.hour)},
      {"surrogate.window_hours", SET_INT(twin.window_hours)},
      {"surrogate.spinup_steps", SET_INT(twin.spinup_steps)},
      {"packages.closure_linear_slope", SET_DOUBLE(options.closure.linear_slope)},
      {"packages.closure_quadratic_c0", SET_DOUBLE(options.closure.quadratic[0])},
      {"packages.closure_quadratic_c1", SET_DOUBLE(options.closure.quadratic[1])},
      {"packages.closure_quadratic_c2", SET_DOUBLE(options.closure.quadratic[2])},
      {"packages.closure_cubic_c0", SET_DOUBLE(options.closure.cubic[0])},
      {"packages.closure_cubic_c1", SET_DOUBLE(options.closure.cubic[1])},
      {"packages.closure_cubic_c2", SET_DOUBLE(options.closure.cubic[2])},
      {"packages.closure_cubic_c3", SET_DOUBLE(options.closure.cubic[3])},
      {"packages.forcing_sin_amplitude", SET_DOUBLE(options.forcing_sin_amplitude)},
      {"packages.forcing_mod_amplitude", SET_DOUBLE(options.forcing_mod_amplitude)},
      {"packages.forcing_mod_period", SET_DOUBLE(options.forcing_mod_period)},
      {"packages.enhanced_dissipation", SET_DOUBLE(options.enhanced_dissipation)},
      {"observation.kind",
       [](ExperimentSpec& s, const std::string& v, const std::string& ctx) {
         if (v == "subset") {
           s.observation.kind = ObsKind::SubsetLinear;
         } else if (v == "qoi") {
           s.observation.kind = ObsKind::QoiDiagnostic;
         } else {
           throw ConfigError(ctx + ": observation kind must be 'subset' or 'qoi', got '" + v + "'");
         }
       }},
      {"observation.indices",
       [](ExperimentSpec& s, const std::string& v, const std::string& ctx) {
         s.observation.indices = parse_indices(v, ctx);
       }},
      {"observation.noise_sigma", SET_DOUBLE(observation.noise_sigma)},
      {"forest.n_trees", SET_INT(forest.n_trees)},
      {"forest.max_depth", SET_INT(forest.max_depth)},
      {"forest.min_samples_leaf", SET_INT(forest.min_samples_leaf)},
      {"forest.features_per_split", SET_INT(forest.features_per_split)},
      {"network.hidden_width", SET_INT(network.hidden_width)},
      {"network.pointwise_hidden_layers", SET_INT(network.pointwise_hidden_layers)},
      {"network.aggregate_hidden_layers", SET_INT(network.aggregate_hidden_layers)},
      {"network.learning_rate", SET_DOUBLE(network.train.learning_rate)},
      {"network.epochs", SET_INT(network.train.epochs)},
      {"network.batch_size", SET_INT(network.train.batch_size)},
      {"network.init_scale", SET_DOUBLE(network.train.init_scale)},
      {"experiment.seed",
       [](ExperimentSpec& s, const std::string& v, const std::string& ctx) {
         s.seed = static_cast<std::uint64_t>(parse_int(v, ctx));
       }},
      {"experiment.learner",
       [](ExperimentSpec& s, const std::string& v, const std::string& ctx) {
         try {
           s.learner = learner_from_name(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(ctx + ": " + e.what());
         }
       }},
      {"experiment.train_fraction", SET_DOUBLE(train_fraction)},
      {"experiment.top_k", SET_INT(top_k)},
      {"experiment.threads", SET_INT(threads)},
  };
  return table;
}

#undef SET_DOUBLE
#undef SET_INT

}  // namespace

ExperimentSpec parse_config_text(const std::string& text, const std::string& label) {
  ExperimentSpec spec;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string context = label + ":" + std::to_string(line_no);

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(context + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(context + ": empty section name");
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(context + ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(context + ": empty key");
    if (section.empty()) throw ConfigError(context + ": key '" + key + "' outside any section");

    const std::string full_key = section + "." + key;
    const auto& table = key_table();
    const auto it = table.find(full_key);
    if (it == table.end()) {
      throw ConfigError(context + ": unknown key '" + full_key + "'");
    }
    it->second(spec, value, context + " (" + full_key + ")");
  }
  return spec;
}

ExperimentSpec parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.filename().string());
}

nlohmann::json spec_to_json(const ExperimentSpec& s) {
  nlohmann::json j;
  j["surrogate"] = {{"slow_dim", s.twin.slow_dim},
                    {"fast_per_slow", s.twin.fast_per_slow},
                    {"forcing", s.twin.forcing},
                    {"coupling", s.twin.coupling},
                    {"subgrid_speed", s.twin.subgrid_speed},
                    {"subgrid_amplitude", s.twin.subgrid_amplitude},
                    {"dt", s.twin.dt},
                    {"hour", s.twin.hour},
                    {"window_hours", s.twin.window_hours},
                    {"spinup_steps", s.twin.spinup_steps}};
  j["packages"] = {{"closure_linear_slope", s.options.closure.linear_slope},
                   {"closure_quadratic", s.options.closure.quadratic},
                   {"closure_cubic", s.options.closure.cubic},
                   {"forcing_sin_amplitude", s.options.forcing_sin_amplitude},
                   {"forcing_mod_amplitude", s.options.forcing_mod_amplitude},
                   {"forcing_mod_period", s.options.forcing_mod_period},
                   {"enhanced_dissipation", s.options.enhanced_dissipation}};
  j["observation"] = {{"kind", s.observation.kind == ObsKind::QoiDiagnostic ? "qoi" : "subset"},
                      {"indices", s.observation.indices},
                      {"noise_sigma", s.observation.noise_sigma}};
  j["forest"] = {{"n_trees", s.forest.n_trees},
                 {"max_depth", s.forest.max_depth},
                 {"min_samples_leaf", s.forest.min_samples_leaf},
                 {"features_per_split", s.forest.features_per_split}};
  j["network"] = {{"hidden_width", s.network.hidden_width},
                  {"pointwise_hidden_layers", s.network.pointwise_hidden_layers},
                  {"aggregate_hidden_layers", s.network.aggregate_hidden_layers},
                  {"learning_rate", s.network.train.learning_rate},
                  {"epochs", s.network.train.epochs},
                  {"batch_size", s.network.train.batch_size},
                  {"init_scale", s.network.train.init_scale}};
  j["experiment"] = {{"seed", s.seed},
                     {"learner", learner_name(s.learner)},
                     {"train_fraction", s.train_fraction},
                     {"top_k", s.top_k},
                     {"threads", s.threads}};
  return j;
}

ExperimentSpec spec_from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  try {
    const auto& t = j.at("surrogate");
    s.twin.slow_dim = t.at("slow_dim").get<int>();
    s.twin.fast_per_slow = t.at("fast_per_slow").get<int>();
    s.twin.forcing = t.at("forcing").get<double>();
    s.twin.coupling = t.at("coupling").get<double>();
    s.twin.subgrid_speed = t.at("subgrid_speed").get<double>();
    s.twin.subgrid_amplitude = t.at("subgrid_amplitude").get<double>();
    s.twin.dt = t.at("dt").get<double>();
    s.twin.hour = t.at("hour").get<double>();
    s.twin.window_hours = t.at("window_hours").get<int>();
    s.twin.spinup_steps = t.at("spinup_steps").get<int>();
    const auto& p = j.at("packages");
    s.options.closure.linear_slope = p.at("closure_linear_slope").get<double>();
    s.options.closure.quadratic = p.at("closure_quadratic").get<std::array<double, 3>>();
    s.options.closure.cubic = p.at("closure_cubic").get<std::array<double, 4>>();
    s.options.forcing_sin_amplitude = p.at("forcing_sin_amplitude").get<double>();
    s.options.forcing_mod_amplitude = p.at("forcing_mod_amplitude").get<double>();
    s.options.forcing_mod_period = p.at("forcing_mod_period").get<double>();
    s.options.enhanced_dissipation = p.at("enhanced_dissipation").get<double>();
    const auto& o = j.at("observation");
    s.observation.kind =
        o.at("kind").get<std::string>() == "qoi" ? ObsKind::QoiDiagnostic : ObsKind::SubsetLinear;
    s.observation.indices = o.at("indices").get<std::vector<int>>();
    s.observation.noise_sigma = o.at("noise_sigma").get<double>();
    const auto& f = j.at("forest");
    s.forest.n_trees = f.at("n_trees").get<int>();
    s.forest.max_depth = f.at("max_depth").get<int>();
    s.forest.min_samples_leaf = f.at("min_samples_leaf").get<int>();
    s.forest.features_per_split = f.at("features_per_split").get<int>();
    const auto& n = j.at("network");
    s.network.hidden_width = n.at("hidden_width").get<int>();
    s.network.pointwise_hidden_layers = n.at("pointwise_hidden_layers").get<int>();
    s.network.aggregate_hidden_layers = n.at("aggregate_hidden_layers").get<int>();
    s.network.train.learning_rate = n.at("learning_rate").get<double>();
    s.network.train.epochs = n.at("epochs").get<int>();
    s.network.train.batch_size = n.at("batch_size").get<int>();
    s.network.train.init_scale = n.at("init_scale").get<double>();
    const auto& e = j.at("experiment");
    s.seed = e.at("seed").get<std::uint64_t>();
    s.learner = learner_from_name(e.at("learner").get<std::string>());
    s.train_fraction = e.at("train_fraction").get<double>();
    s.top_k = e.at("top_k").get<int>();
    s.threads = e.at("threads").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("spec_from_json: ") + e.what());
  }
  return s;
}

std::string learner_name(Learner learner) {
  return learner == Learner::RandomForest ? "rf" : "nn";
}

Learner learner_from_name(const std::string& name) {
  if (name == "rf") return Learner::RandomForest;
  if (name == "nn") return Learner::NeuralNet;
  throw std::invalid_argument("learner must be 'rf' or 'nn', got '" + name + "'");
}

}  // namespace twinlearn
