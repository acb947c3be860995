#include "cdfgo/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "cdfgo/error.hpp"
#include "json.hpp"

namespace cdfgo {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Strict reader for one JSON object: typed lookups with defaults, and an
// error for any key that was never asked for.
class In {
 public:
  In(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ValidationError("config error at " + path + ": " + what);
  }
  std::string at(const std::string& key) const { return path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  bool has(const std::string& key) const { return j_.contains(key); }

  double num(const std::string& key, double def) {
    const json* v = find(key);
    if (!v) return def;
    if (v->is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!v->is_number()) fail(at(key), "expected a number");
    return v->get<double>();
  }
  int integer(const std::string& key, int def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_number_integer()) fail(at(key), "expected an integer");
    const auto x = v->get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      fail(at(key), "integer out of range");
    }
    return static_cast<int>(x);
  }
  std::int64_t i64(const std::string& key, std::int64_t def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_number_integer()) fail(at(key), "expected an integer");
    return v->get<std::int64_t>();
  }
  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_number_unsigned()) fail(at(key), "expected a non-negative integer");
    return v->get<std::uint64_t>();
  }
  bool boolean(const std::string& key, bool def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_boolean()) fail(at(key), "expected true or false");
    return v->get<bool>();
  }
  std::string str(const std::string& key, const std::string& def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_string()) fail(at(key), "expected a string");
    return v->get<std::string>();
  }
  const json& array(const std::string& key) {
    const json* v = find(key);
    if (!v || !v->is_array()) fail(at(key), "expected an array");
    return *v;
  }
  const json& required(const std::string& key) {
    const json* v = find(key);
    if (!v) fail(at(key), "missing");
    return *v;
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(source + ": malformed JSON: " + e.what());
  }
}

// Doubles that may be non-finite are written as null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

template <class F>
auto with_path(const std::string& prefix, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    if (what.rfind("config error", 0) == 0) throw;
    throw ValidationError("config error at " + prefix + ": " + what);
  }
}

// ------------------------------------------------------------- scenario

json scenario_json(const ScenarioConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["n_epochs"] = c.n_epochs;
  j["epoch_interval"] = c.epoch_interval;
  j["origin"] = {{"latitude_rad", c.origin.latitude},
                 {"longitude_rad", c.origin.longitude},
                 {"height_m", c.origin.height}};
  j["waypoints"] = json::array();
  for (const auto& w : c.waypoints) j["waypoints"].push_back({{"east", w.east}, {"north", w.north}});
  j["speed"] = c.speed;
  j["constellations"] = json::array();
  for (const auto& s : c.constellations) {
    j["constellations"].push_back({{"system", std::string(constellation_name(s.system))},
                                   {"num_satellites", s.num_satellites},
                                   {"num_planes", s.num_planes},
                                   {"altitude_m", s.altitude_m},
                                   {"inclination_deg", s.inclination_deg}});
  }
  j["elevation_mask_deg"] = c.elevation_mask_deg;
  j["sectors"] = json::array();
  for (const auto& s : c.sectors) {
    j["sectors"].push_back({{"az_start_deg", s.az_start_deg},
                            {"az_end_deg", s.az_end_deg},
                            {"max_blocked_elevation_deg", s.max_blocked_elevation_deg},
                            {"nlos_probability", s.nlos_probability}});
  }
  j["sigma0"] = c.sigma0;
  j["elevation_exponent"] = c.elevation_exponent;
  j["bias_median"] = c.bias_median;
  j["bias_log_sigma"] = c.bias_log_sigma;
  j["cn0_base"] = c.cn0_base;
  j["cn0_noise"] = c.cn0_noise;
  j["cn0_penalty_min"] = c.cn0_penalty_min;
  j["cn0_penalty_max"] = c.cn0_penalty_max;
  j["clock_walk_sigma"] = c.clock_walk_sigma;
  return j;
}

ScenarioConfig parse_scenario(const json& j, const std::string& path) {
  In in(j, path);
  // A preset name seeds the defaults; explicit keys override it.
  ScenarioConfig c;
  const std::string preset_name = in.str("preset", "");
  if (!preset_name.empty()) c = with_path(in.at("preset"), [&] { return preset(preset_name); });
  c.name = in.str("name", preset_name.empty() ? c.name : preset_name);
  c.seed = in.u64("seed", c.seed);
  c.n_epochs = in.integer("n_epochs", c.n_epochs);
  c.epoch_interval = in.num("epoch_interval", c.epoch_interval);
  if (const json* o = in.find("origin")) {
    In oi(*o, in.at("origin"));
    c.origin.latitude = oi.num("latitude_rad", c.origin.latitude);
    c.origin.longitude = oi.num("longitude_rad", c.origin.longitude);
    c.origin.height = oi.num("height_m", c.origin.height);
    oi.done();
  }
  if (in.has("waypoints")) {
    c.waypoints.clear();
    const json& arr = in.array("waypoints");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      In w(arr[i], in.at("waypoints") + "[" + std::to_string(i) + "]");
      c.waypoints.push_back({w.num("east", 0.0), w.num("north", 0.0)});
      w.done();
    }
  }
  c.speed = in.num("speed", c.speed);
  if (in.has("constellations")) {
    c.constellations.clear();
    const json& arr = in.array("constellations");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = in.at("constellations") + "[" + std::to_string(i) + "]";
      In s(arr[i], p);
      const std::string sys = s.str("system", "gps_qzss");
      ConstellationShell shell =
          default_shell(with_path(p + ".system", [&] { return constellation_from_name(sys); }));
      shell.num_satellites = s.integer("num_satellites", shell.num_satellites);
      shell.num_planes = s.integer("num_planes", shell.num_planes);
      shell.altitude_m = s.num("altitude_m", shell.altitude_m);
      shell.inclination_deg = s.num("inclination_deg", shell.inclination_deg);
      s.done();
      c.constellations.push_back(shell);
    }
  }
  c.elevation_mask_deg = in.num("elevation_mask_deg", c.elevation_mask_deg);
  if (in.has("sectors")) {
    c.sectors.clear();
    const json& arr = in.array("sectors");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      In s(arr[i], in.at("sectors") + "[" + std::to_string(i) + "]");
      CanyonSector sec;
      sec.az_start_deg = s.num("az_start_deg", 0.0);
      sec.az_end_deg = s.num("az_end_deg", 0.0);
      sec.max_blocked_elevation_deg = s.num("max_blocked_elevation_deg", 0.0);
      sec.nlos_probability = s.num("nlos_probability", 0.0);
      s.done();
      c.sectors.push_back(sec);
    }
  }
  c.sigma0 = in.num("sigma0", c.sigma0);
  c.elevation_exponent = in.num("elevation_exponent", c.elevation_exponent);
  c.bias_median = in.num("bias_median", c.bias_median);
  c.bias_log_sigma = in.num("bias_log_sigma", c.bias_log_sigma);
  c.cn0_base = in.num("cn0_base", c.cn0_base);
  c.cn0_noise = in.num("cn0_noise", c.cn0_noise);
  c.cn0_penalty_min = in.num("cn0_penalty_min", c.cn0_penalty_min);
  c.cn0_penalty_max = in.num("cn0_penalty_max", c.cn0_penalty_max);
  c.clock_walk_sigma = in.num("clock_walk_sigma", c.clock_walk_sigma);
  in.done();
  with_path(path, [&] { c.validate(); return 0; });
  return c;
}

// ------------------------------------------------------------- scheme/train

json scheme_json(const WeightScheme& s) {
  json j;
  j["kind"] = std::string(scheme_name(s.kind()));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ElevationParams>) {
          j["a"] = p.a;
        } else if constexpr (std::is_same_v<T, SigmaEpsParams>) {
          j["a"] = p.a;
          j["b"] = p.b;
        } else {
          j["sigma0"] = p.sigma0;
          j["snr0"] = p.snr0;
          j["snr1"] = p.snr1;
          j["snr_a"] = p.snr_a;
          j["snr_k"] = p.snr_k;
        }
      },
      s.params);
  return j;
}

WeightScheme parse_scheme(const json& j, const std::string& path) {
  In in(j, path);
  const std::string kind = in.str("kind", "gogps");
  WeightScheme s;
  switch (with_path(in.at("kind"), [&] { return scheme_from_name(kind); })) {
    case SchemeKind::Elevation: {
      ElevationParams p;
      p.a = in.num("a", p.a);
      s = WeightScheme::elevation(p);
      break;
    }
    case SchemeKind::SigmaEps: {
      SigmaEpsParams p;
      p.a = in.num("a", p.a);
      p.b = in.num("b", p.b);
      s = WeightScheme::sigma_eps(p);
      break;
    }
    case SchemeKind::GoGps: {
      GoGpsParams p;
      p.sigma0 = in.num("sigma0", p.sigma0);
      p.snr0 = in.num("snr0", p.snr0);
      p.snr1 = in.num("snr1", p.snr1);
      p.snr_a = in.num("snr_a", p.snr_a);
      p.snr_k = in.num("snr_k", p.snr_k);
      s = WeightScheme::gogps(p);
      break;
    }
  }
  in.done();
  with_path(path, [&] { validate_scheme(s); return 0; });
  return s;
}

json train_json(const TrainConfig& t) {
  json j;
  j["objective"] = std::string(objective_name(t.objective));
  j["learning_rate"] = t.learning_rate;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["batch_size"] = t.batch_size;
  j["passes"] = t.passes;
  j["grad_clip_norm"] = t.grad_clip_norm;
  j["seed"] = t.seed;
  j["window_stride"] = t.window_stride;
  j["validation_fraction"] = t.validation_fraction;
  j["loss"] = {{"alpha", t.loss.alpha},
               {"beta", t.loss.beta},
               {"mc_samples", t.loss.mc_samples},
               {"rng_seed", t.loss.rng_seed}};
  j["wgn"] = {{"d_model", t.wgn.d_model},       {"ff_dim", t.wgn.ff_dim},
              {"num_layers", t.wgn.num_layers}, {"head_hidden", t.wgn.head_hidden},
              {"leaky_slope", t.wgn.leaky_slope}, {"ln_eps", t.wgn.ln_eps},
              {"w_min", t.wgn.w_min}};
  j["solver"] = {{"max_iterations", t.solver.max_iterations},
                 {"tolerance", t.solver.tolerance},
                 {"regularization", t.solver.regularization},
                 {"covariance_jitter", t.solver.covariance_jitter},
                 {"divergence_ratio", t.solver.divergence_ratio},
                 {"max_step_halvings", t.solver.max_step_halvings}};
  return j;
}

void validate_solver(const SolverOptions& s) {
  if (s.max_iterations < 1) throw ValidationError("solver.max_iterations must be >= 1");
  if (!(s.tolerance > 0.0)) throw ValidationError("solver.tolerance must be > 0");
  if (!(s.regularization >= 0.0)) throw ValidationError("solver.regularization must be >= 0");
  if (!(s.covariance_jitter >= 0.0)) throw ValidationError("solver.covariance_jitter must be >= 0");
  if (!(s.divergence_ratio >= 1.0)) throw ValidationError("solver.divergence_ratio must be >= 1");
  if (s.max_step_halvings < 0) throw ValidationError("solver.max_step_halvings must be >= 0");
}

TrainConfig parse_train(const json& j, const std::string& path) {
  In in(j, path);
  TrainConfig t;
  const std::string obj = in.str("objective", std::string(objective_name(t.objective)));
  t.objective = with_path(in.at("objective"), [&] { return objective_from_name(obj); });
  t.learning_rate = in.num("learning_rate", t.learning_rate);
  t.beta1 = in.num("beta1", t.beta1);
  t.beta2 = in.num("beta2", t.beta2);
  t.adam_eps = in.num("adam_eps", t.adam_eps);
  t.batch_size = in.integer("batch_size", t.batch_size);
  t.passes = in.integer("passes", t.passes);
  t.grad_clip_norm = in.num("grad_clip_norm", t.grad_clip_norm);
  t.seed = in.u64("seed", t.seed);
  t.window_stride = in.integer("window_stride", t.window_stride);
  t.validation_fraction = in.num("validation_fraction", t.validation_fraction);
  if (const json* l = in.find("loss")) {
    In li(*l, in.at("loss"));
    t.loss.alpha = li.num("alpha", t.loss.alpha);
    t.loss.beta = li.num("beta", t.loss.beta);
    t.loss.mc_samples = li.integer("mc_samples", t.loss.mc_samples);
    t.loss.rng_seed = li.u64("rng_seed", t.loss.rng_seed);
    li.done();
  }
  if (const json* w = in.find("wgn")) {
    In wi(*w, in.at("wgn"));
    t.wgn.d_model = wi.integer("d_model", t.wgn.d_model);
    t.wgn.ff_dim = wi.integer("ff_dim", t.wgn.ff_dim);
    t.wgn.num_layers = wi.integer("num_layers", t.wgn.num_layers);
    t.wgn.head_hidden = wi.integer("head_hidden", t.wgn.head_hidden);
    t.wgn.leaky_slope = wi.num("leaky_slope", t.wgn.leaky_slope);
    t.wgn.ln_eps = wi.num("ln_eps", t.wgn.ln_eps);
    t.wgn.w_min = wi.num("w_min", t.wgn.w_min);
    wi.done();
  }
  if (const json* s = in.find("solver")) {
    In si(*s, in.at("solver"));
    t.solver.max_iterations = si.integer("max_iterations", t.solver.max_iterations);
    t.solver.tolerance = si.num("tolerance", t.solver.tolerance);
    t.solver.regularization = si.num("regularization", t.solver.regularization);
    t.solver.covariance_jitter = si.num("covariance_jitter", t.solver.covariance_jitter);
    t.solver.divergence_ratio = si.num("divergence_ratio", t.solver.divergence_ratio);
    t.solver.max_step_halvings = si.integer("max_step_halvings", t.solver.max_step_halvings);
    si.done();
  }
  in.done();
  with_path(path, [&] {
    t.validate();
    validate_solver(t.solver);
    return 0;
  });
  return t;
}

// ------------------------------------------------------------- model tensors

json tensors_json(const WgnModel& m) {
  json arr = json::array();
  for (const auto& t : m.tensors()) {
    json d = json::array();
    for (Eigen::Index k = 0; k < t.value.size(); ++k) d.push_back(t.value.data()[k]);
    arr.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()},
                   {"data", std::move(d)}});
  }
  return arr;
}

void load_matrix(const json& j, Eigen::MatrixXd& m, const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != m.size()) {
    throw ValidationError(where + ": tensor size mismatch");
  }
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    if (!j[k].is_number()) throw ValidationError(where + ": non-numeric tensor entry");
    m.data()[k] = j[k].get<double>();
  }
}

void load_tensors(const json& arr, WgnModel& m, const std::string& where) {
  if (!arr.is_array() || arr.size() != m.tensors().size()) {
    throw ValidationError(where + ": tensor list does not match the architecture");
  }
  for (std::size_t i = 0; i < arr.size(); ++i) {
    auto& t = m.tensors()[i];
    if (arr[i].value("name", "") != t.name || arr[i].value("rows", -1) != t.value.rows() ||
        arr[i].value("cols", -1) != t.value.cols()) {
      throw ValidationError(where + ": tensor " + std::to_string(i) + " does not match '" +
                            t.name + "'");
    }
    load_matrix(arr[i]["data"], t.value, where + "." + t.name);
  }
}

json moments_json(const std::vector<Eigen::MatrixXd>& v) {
  json arr = json::array();
  for (const auto& m : v) {
    json d = json::array();
    for (Eigen::Index k = 0; k < m.size(); ++k) d.push_back(m.data()[k]);
    arr.push_back(std::move(d));
  }
  return arr;
}

}  // namespace

// ---------------------------------------------------------------- files

std::string read_text_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& file, const std::string& text) {
  std::error_code ec;
  if (file.has_parent_path()) fs::create_directories(file.parent_path(), ec);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + file.string());
  out << text;
  if (!out) throw ValidationError("write failed for " + file.string());
}

// ---------------------------------------------------------------- dataset

bool Dataset::has_truth() const {
  if (epochs.empty()) return false;
  for (const auto& e : epochs) {
    if (!e.truth_position) return false;
  }
  return true;
}

Dataset dataset_from_run(const SimulatedRun& run) {
  Dataset ds;
  ds.origin = run.config.origin;
  ds.scenario = run.config;
  ds.epochs = run.epochs;
  return ds;
}

std::string dataset_to_string(const Dataset& ds) {
  std::string out;
  json header;
  header["format"] = "cdfgo-dataset";
  header["version"] = kDatasetVersion;
  header["origin"] = {{"latitude_rad", ds.origin.latitude},
                      {"longitude_rad", ds.origin.longitude},
                      {"height_m", ds.origin.height}};
  header["scenario"] = ds.scenario ? scenario_json(*ds.scenario) : json(nullptr);
  header["epochs"] = ds.epochs.size();
  out += header.dump() + "\n";
  for (const auto& e : ds.epochs) {
    json r;
    r["epoch"] = e.epoch_index;
    r["time"] = e.time;
    r["truth"] = e.truth_position
                     ? json::array({e.truth_position->e, e.truth_position->n, e.truth_position->u})
                     : json(nullptr);
    r["truth_clock"] = e.truth_clock ? json(*e.truth_clock) : json(nullptr);
    json obs = json::array();
    for (const auto& o : e.observations) {
      json jo;
      jo["sat"] = o.sat_id;
      jo["system"] = std::string(constellation_name(o.constellation));
      jo["pos"] = {o.sat_pos.x, o.sat_pos.y, o.sat_pos.z};
      jo["pr"] = o.pseudorange;
      jo["cn0"] = o.cn0;
      jo["corr"] = o.correction;
      if (o.truth_contamination) jo["contamination"] = *o.truth_contamination;
      obs.push_back(std::move(jo));
    }
    r["obs"] = std::move(obs);
    out += r.dump() + "\n";
  }
  return out;
}

Dataset dataset_from_string(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ValidationError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  Dataset ds;
  std::size_t expected = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(std::string("malformed JSON: ") + e.what());
    }
    try {
      if (!header_seen) {
        if (j.value("format", "") != "cdfgo-dataset") fail("not a cdfgo dataset");
        const int version = j.value("version", -1);
        if (version != kDatasetVersion) {
          fail("unsupported dataset version " + std::to_string(version));
        }
        const json& o = j.at("origin");
        ds.origin = {o.at("latitude_rad").get<double>(), o.at("longitude_rad").get<double>(),
                     o.at("height_m").get<double>()};
        if (j.contains("scenario") && !j["scenario"].is_null()) {
          ds.scenario = parse_scenario(j["scenario"], "header.scenario");
        }
        expected = j.at("epochs").get<std::size_t>();
        header_seen = true;
        continue;
      }
      EpochObservations e;
      e.epoch_index = j.at("epoch").get<int>();
      e.time = j.at("time").get<double>();
      if (j.contains("truth") && !j["truth"].is_null()) {
        const auto t = j["truth"].get<std::vector<double>>();
        if (t.size() != 3) fail("truth must have 3 entries");
        e.truth_position = EnuPoint{t[0], t[1], t[2]};
      }
      if (j.contains("truth_clock") && !j["truth_clock"].is_null()) {
        e.truth_clock = j["truth_clock"].get<ClockBiases>();
      }
      for (const auto& jo : j.at("obs")) {
        SatelliteObservation o;
        o.sat_id = jo.at("sat").get<std::string>();
        o.constellation = constellation_from_name(jo.at("system").get<std::string>());
        if (o.constellation != constellation_from_sat_id(o.sat_id)) {
          fail(o.sat_id + ": system does not match the satellite id");
        }
        const auto p = jo.at("pos").get<std::vector<double>>();
        if (p.size() != 3) fail(o.sat_id + ": pos must have 3 entries");
        o.sat_pos = {p[0], p[1], p[2]};
        o.pseudorange = jo.at("pr").get<double>();
        o.cn0 = jo.at("cn0").get<double>();
        o.correction = jo.at("corr").get<double>();
        if (jo.contains("contamination")) o.truth_contamination = jo["contamination"].get<double>();
        e.observations.push_back(std::move(o));
      }
      ds.epochs.push_back(std::move(e));
    } catch (const json::exception& ex) {
      fail(std::string("bad record: ") + ex.what());
    }
  }
  if (!header_seen) throw ValidationError(source + ": empty dataset");
  if (ds.epochs.size() != expected) {
    throw ValidationError(source + ": header announces " + std::to_string(expected) +
                          " epochs, file has " + std::to_string(ds.epochs.size()));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const fs::path& file) {
  write_text_file(file, dataset_to_string(ds));
}

Dataset read_dataset(const fs::path& file) {
  return dataset_from_string(read_text_file(file), file.string());
}

// ---------------------------------------------------------------- config

void EvalConfig::validate() const {
  if (window_stride < 1) throw ValidationError("eval.window_stride must be >= 1");
  if (es_samples < 2 || es_samples % 2 != 0) {
    throw ValidationError("eval.es_samples must be an even number >= 2");
  }
}

std::string scenario_to_json(const ScenarioConfig& cfg) { return scenario_json(cfg).dump(2); }

ScenarioConfig scenario_from_json(const std::string& text) {
  return parse_scenario(parse_json(text, "scenario"), "scenario");
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["version"] = kConfigVersion;
  j["scenario"] = scenario_json(cfg.scenario);
  j["scheme"] = scheme_json(cfg.scheme);
  j["train"] = train_json(cfg.train);
  j["eval"] = {{"window_stride", cfg.eval.window_stride},
               {"es_samples", cfg.eval.es_samples},
               {"es_seed", cfg.eval.es_seed}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  const json j = parse_json(text, "config");
  In in(j, "config");
  const int version = in.integer("version", kConfigVersion);
  if (version != kConfigVersion) In::fail("config.version", "unsupported version");
  RunConfig cfg;
  if (const json* s = in.find("scenario")) cfg.scenario = parse_scenario(*s, "config.scenario");
  if (const json* s = in.find("scheme")) cfg.scheme = parse_scheme(*s, "config.scheme");
  if (const json* t = in.find("train")) cfg.train = parse_train(*t, "config.train");
  if (const json* e = in.find("eval")) {
    In ei(*e, "config.eval");
    cfg.eval.window_stride = ei.integer("window_stride", cfg.eval.window_stride);
    cfg.eval.es_samples = ei.integer("es_samples", cfg.eval.es_samples);
    cfg.eval.es_seed = ei.u64("es_seed", cfg.eval.es_seed);
    ei.done();
    with_path("config.eval", [&] { cfg.eval.validate(); return 0; });
  }
  in.done();
  return cfg;
}

RunConfig load_run_config(const fs::path& file) {
  try {
    return run_config_from_json(read_text_file(file));
  } catch (const ValidationError& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- checkpoint

std::string checkpoint_to_json(const TrainConfig& cfg, const TrainState& s) {
  json j;
  j["format"] = "cdfgo-checkpoint";
  j["version"] = kCheckpointVersion;
  j["train"] = train_json(cfg);
  const FeatureStats& st = s.model.stats();
  j["stats"] = {{"mean", st.mean}, {"std", st.stddev}};
  j["best_model"] = tensors_json(s.best_model);
  j["best_stats"] = {{"mean", s.best_model.stats().mean}, {"std", s.best_model.stats().stddev}};
  j["model"] = tensors_json(s.model);
  json tr;
  tr["adam_step"] = s.adam.step;
  tr["adam_m"] = moments_json(s.adam.m);
  tr["adam_v"] = moments_json(s.adam.v);
  tr["pass"] = s.pass;
  tr["batch_cursor"] = s.batch_cursor;
  tr["skipped_steps"] = s.skipped_steps;
  tr["best_validation"] = finite_or_null(s.best_validation);
  tr["best_pass"] = s.best_pass;
  json log = json::array();
  for (const auto& r : s.log) {
    log.push_back({r.step, r.pass, finite_or_null(r.loss), finite_or_null(r.grad_norm),
                   r.skipped_steps, r.nonconverged_windows});
  }
  tr["log"] = std::move(log);
  json val = json::array();
  for (const auto& v : s.validation) val.push_back({v.pass, finite_or_null(v.loss), v.best});
  tr["validation"] = std::move(val);
  j["training"] = std::move(tr);
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text, const std::string& source) {
  const json j = parse_json(text, source);
  if (!j.is_object() || j.value("format", "") != "cdfgo-checkpoint") {
    throw ValidationError(source + ": not a cdfgo checkpoint");
  }
  const int version = j.value("version", -1);
  if (version != kCheckpointVersion) {
    throw ValidationError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  auto num_or = [](const json& v, double fallback) {
    return v.is_null() ? fallback : v.get<double>();
  };
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  Checkpoint ck;
  try {
    ck.config = parse_train(j.at("train"), source + ":train");
    auto stats_of = [](const json& sj) {
      FeatureStats fs;
      fs.mean = sj.at("mean").get<std::array<double, kNumFeatures>>();
      fs.stddev = sj.at("std").get<std::array<double, kNumFeatures>>();
      return fs;
    };
    TrainState& s = ck.state;
    s.model = WgnModel(ck.config.wgn, 0);
    s.model.set_stats(stats_of(j.at("stats")));
    load_tensors(j.at("model"), s.model, source + ":model");
    s.best_model = WgnModel(ck.config.wgn, 0);
    s.best_model.set_stats(stats_of(j.at("best_stats")));
    load_tensors(j.at("best_model"), s.best_model, source + ":best_model");

    const json& tr = j.at("training");
    s.adam.step = tr.at("adam_step").get<std::int64_t>();
    s.adam.m = s.model.zero_gradients();
    s.adam.v = s.model.zero_gradients();
    const json& jm = tr.at("adam_m");
    const json& jv = tr.at("adam_v");
    if (jm.size() != s.adam.m.size() || jv.size() != s.adam.v.size()) {
      throw ValidationError(source + ": Adam moments do not match the architecture");
    }
    for (std::size_t k = 0; k < s.adam.m.size(); ++k) {
      load_matrix(jm[k], s.adam.m[k], source + ":adam_m");
      load_matrix(jv[k], s.adam.v[k], source + ":adam_v");
    }
    s.pass = tr.at("pass").get<int>();
    s.batch_cursor = tr.at("batch_cursor").get<int>();
    s.skipped_steps = tr.at("skipped_steps").get<std::int64_t>();
    s.best_validation = num_or(tr.at("best_validation"), std::numeric_limits<double>::infinity());
    s.best_pass = tr.at("best_pass").get<int>();
    for (const auto& r : tr.at("log")) {
      TrainLogRow row;
      row.step = r.at(0).get<std::int64_t>();
      row.pass = r.at(1).get<int>();
      row.loss = num_or(r.at(2), kNaN);
      row.grad_norm = num_or(r.at(3), kNaN);
      row.skipped_steps = r.at(4).get<std::int64_t>();
      row.nonconverged_windows = r.at(5).get<int>();
      s.log.push_back(row);
    }
    for (const auto& v : tr.at("validation")) {
      s.validation.push_back({v.at(0).get<int>(), num_or(v.at(1), kNaN), v.at(2).get<bool>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError(source + ": malformed checkpoint: " + e.what());
  }
  return ck;
}

void write_checkpoint(const TrainConfig& cfg, const TrainState& state, const fs::path& file) {
  write_text_file(file, checkpoint_to_json(cfg, state));
}

Checkpoint read_checkpoint(const fs::path& file) {
  return checkpoint_from_json(read_text_file(file), file.string());
}

namespace {
std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_training_log(const TrainState& state, const fs::path& file) {
  std::string out = "step,pass,loss,grad_norm,skipped_steps,nonconverged_windows\n";
  for (const auto& r : state.log) {
    out += std::to_string(r.step) + "," + std::to_string(r.pass) + "," + csv_num(r.loss) + "," +
           csv_num(r.grad_norm) + "," + std::to_string(r.skipped_steps) + "," +
           std::to_string(r.nonconverged_windows) + "\n";
  }
  write_text_file(file, out);
}

void write_validation_log(const TrainState& state, const fs::path& file) {
  std::string out = "pass,validation_loss,best\n";
  for (const auto& v : state.validation) {
    out += std::to_string(v.pass) + "," + csv_num(v.loss) + "," + (v.best ? "1" : "0") + "\n";
  }
  write_text_file(file, out);
}

}  // namespace cdfgo
