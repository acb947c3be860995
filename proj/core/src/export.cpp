#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cdfgo/error.hpp"
#include "cdfgo/evaluation.hpp"
#include "json.hpp"

namespace cdfgo {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& file) {
  std::error_code ec;
  if (file.has_parent_path()) fs::create_directories(file.parent_path(), ec);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + file.string());
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& file, std::size_t columns) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot read " + file.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) {
      throw ValidationError(file.string() + ": expected " + std::to_string(columns) + " columns");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Minimal SVG writer.
class Svg {
 public:
  Svg(double w, double h) : w_(w), h_(h) {}
  void line(double x1, double y1, double x2, double y2, const char* color, double width = 1.0) {
    body_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
          << "\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
    for (const auto& [x, y] : pts) body_ << x << ',' << y << ' ';
    body_ << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& color) {
    body_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
          << "\" fill=\"" << color << "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill, const char* stroke) {
    body_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << fill
          << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 11) {
    body_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\">" << s << "</text>\n";
  }
  void save(const fs::path& file) const {
    auto out = open_out(file);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_
        << "\" viewBox=\"0 0 " << w_ << ' ' << h_ << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

// Blue (0) to red (1).
std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(255 * t), 60,
                static_cast<int>(255 * (1.0 - t)));
  return buf;
}

void envelope_panel(Svg& svg, std::span<const EpochRecord> r, int axis, double top,
                    double height, const char* label) {
  const double left = 50.0, width = 700.0;
  double ymax = 1.0;
  for (const auto& rec : r) {
    ymax = std::max({ymax, std::abs(rec.error(axis)), 3.0 * rec.sigma(axis)});
  }
  ymax = std::min(ymax, 1e4);
  const double n = std::max<double>(1.0, static_cast<double>(r.size()) - 1.0);
  auto px = [&](std::size_t i) { return left + width * static_cast<double>(i) / n; };
  auto py = [&](double v) {
    return top + height * 0.5 * (1.0 - std::clamp(v / ymax, -1.0, 1.0));
  };
  svg.line(left, py(0.0), left + width, py(0.0), "#999");
  std::vector<std::pair<double, double>> err, hi, lo;
  for (std::size_t i = 0; i < r.size(); ++i) {
    err.emplace_back(px(i), py(r[i].error(axis)));
    hi.emplace_back(px(i), py(3.0 * r[i].sigma(axis)));
    lo.emplace_back(px(i), py(-3.0 * r[i].sigma(axis)));
  }
  svg.polyline(hi, "#d62728");
  svg.polyline(lo, "#d62728");
  svg.polyline(err, "#1f77b4");
  svg.text(5, top + 12, label);
  svg.text(5, top + height, "+/-" + num(std::round(ymax * 10) / 10) + " m", 9);
}

}  // namespace

void export_envelope(std::span<const EpochRecord> records, const fs::path& dir) {
  auto out = open_out(dir / "envelope.csv");
  out << "epoch,time,err_e,err_n,sigma_e,sigma_n,cov_ee,cov_en,cov_nn,nll,es\n";
  for (const auto& r : records) {
    out << r.epoch_index << ',' << num(r.time) << ',' << num(r.error(0)) << ','
        << num(r.error(1)) << ',' << num(r.sigma(0)) << ',' << num(r.sigma(1)) << ','
        << num(r.covariance(0, 0)) << ',' << num(r.covariance(0, 1)) << ','
        << num(r.covariance(1, 1)) << ',' << num(r.nll) << ',' << num(r.es) << '\n';
  }
  Svg svg(800, 440);
  envelope_panel(svg, records, 0, 10, 200, "East error and +/-3 sigma");
  envelope_panel(svg, records, 1, 230, 200, "North error and +/-3 sigma");
  svg.save(dir / "envelope.svg");
}

void export_satellites(std::span<const SatelliteRecord> sats, const fs::path& dir) {
  {
    auto out = open_out(dir / "satellites.csv");
    out << "epoch,sat_id,azimuth_deg,elevation_deg,weight,normalized_weight,sd_error,"
           "wls_residual,reference,no_reference,contamination\n";
    for (const auto& s : sats) {
      out << s.epoch_index << ',' << s.sat_id << ',' << num(s.azimuth_deg) << ','
          << num(s.elevation_deg) << ',' << num(s.weight) << ',' << num(s.normalized_weight)
          << ',' << num(s.sd_error) << ',' << num(s.wls_residual) << ',' << (s.reference ? 1 : 0)
          << ',' << (s.no_reference ? 1 : 0) << ',' << num(s.contamination) << '\n';
    }
  }
  {
    auto out = open_out(dir / "skyplot.csv");
    out << "epoch,sat_id,azimuth_deg,elevation_deg,normalized_weight\n";
    for (const auto& s : sats) {
      out << s.epoch_index << ',' << s.sat_id << ',' << num(s.azimuth_deg) << ','
          << num(s.elevation_deg) << ',' << num(s.normalized_weight) << '\n';
    }
  }

  // Bars: normalized weight (top) and single-differenced error (bottom);
  // reference satellites are left out, their error is zero by construction.
  std::vector<const SatelliteRecord*> shown;
  for (const auto& s : sats) {
    if (!s.reference && !s.no_reference) shown.push_back(&s);
  }
  Svg bars(800, 420);
  double wmax = 1e-9, emax = 1e-9;
  for (const auto* s : shown) {
    wmax = std::max(wmax, s->normalized_weight);
    emax = std::max(emax, std::abs(s->sd_error));
  }
  const double slot = shown.empty() ? 0.0 : 700.0 / static_cast<double>(shown.size());
  bars.text(5, 14, "normalized weight");
  bars.text(5, 224, "single-differenced error (m)");
  bars.line(50, 310, 750, 310, "#999");
  for (std::size_t i = 0; i < shown.size(); ++i) {
    const auto* s = shown[i];
    const double x = 50.0 + slot * static_cast<double>(i);
    const double h = 170.0 * s->normalized_weight / wmax;
    bars.rect(x + 1, 190 - h, std::max(slot - 2, 1.0), h, "#1f77b4");
    const double e = 80.0 * s->sd_error / emax;
    bars.rect(x + 1, e >= 0 ? 310 - e : 310, std::max(slot - 2, 1.0), std::abs(e),
              s->contamination > kContaminationThreshold ? "#d62728" : "#7f7f7f");
    bars.text(x + 1, 410, s->sat_id, 8);
  }
  bars.save(dir / "satellites.svg");

  Svg sky(420, 420);
  const double cx = 210, cy = 210, rad = 190;
  for (double el : {0.0, 30.0, 60.0}) {
    const double r = rad * (90.0 - el) / 90.0;
    sky.circle(cx, cy, r, "none", "#bbb");
  }
  sky.line(cx, cy - rad, cx, cy + rad, "#ddd");
  sky.line(cx - rad, cy, cx + rad, cy, "#ddd");
  sky.text(cx - 4, cy - rad - 4, "N");
  double wbar_max = 1e-9;
  for (const auto& s : sats) wbar_max = std::max(wbar_max, s.normalized_weight);
  for (const auto& s : sats) {
    const double r = rad * (90.0 - s.elevation_deg) / 90.0;
    const double az = s.azimuth_deg * kDegToRad;
    const double x = cx + r * std::sin(az), y = cy - r * std::cos(az);
    sky.circle(x, y, 7, ramp(s.normalized_weight / wbar_max), "black");
    sky.text(x + 8, y + 4, s.sat_id, 9);
  }
  sky.save(dir / "skyplot.svg");
}

std::string summary_json(std::span<const MethodReport> reports) {
  nlohmann::ordered_json root;
  root["format"] = "cdfgo-summary";
  root["version"] = 1;
  root["aggregation"] = "mean over epochs";
  root["percentile_method"] = "nearest-rank";
  auto& methods = root["methods"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json m;
    const auto& ev = r.evaluation;
    m["method"] = r.method;
    m["epochs"] = ev.records.size();
    m["mean"] = ev.horizontal.mean;
    m["p50"] = ev.horizontal.p50;
    m["p95"] = ev.horizontal.p95;
    m["nll"] = ev.mean_nll;
    m["es"] = ev.mean_es;
    for (const auto& d : ev.diagnostics) {
      const std::string k = std::to_string(static_cast<int>(d.k)) + "sigma";
      m["exceedance_" + k] = {{"east", d.exceedance[0]}, {"north", d.exceedance[1]}};
      m["coverage_" + k] = {{"east", d.coverage[0]}, {"north", d.coverage[1]}};
    }
    m["normalized_weight"] = {{"clean", r.weights.clean},
                              {"contaminated", r.weights.contaminated},
                              {"clean_factors", r.weights.clean_count},
                              {"contaminated_factors", r.weights.contaminated_count}};
    m["weighted_hdop"] = {{"contaminated_epochs", r.hdop.contaminated_epochs},
                          {"clean_epochs", r.hdop.clean_epochs},
                          {"contaminated_epoch_count", r.hdop.contaminated_count},
                          {"clean_epoch_count", r.hdop.clean_count}};
    m["nonconverged_epochs"] = r.nonconverged_epochs;
    methods.push_back(std::move(m));
  }
  return root.dump(2) + "\n";
}

void write_summary(std::span<const MethodReport> reports, const fs::path& file) {
  auto out = open_out(file);
  out << summary_json(reports);
}

std::vector<EpochRecord> read_envelope_csv(const fs::path& file) {
  std::vector<EpochRecord> out;
  for (const auto& c : read_csv(file, 11)) {
    EpochRecord r;
    r.epoch_index = std::stoi(c[0]);
    r.time = std::stod(c[1]);
    r.error << std::stod(c[2]), std::stod(c[3]);
    r.sigma << std::stod(c[4]), std::stod(c[5]);
    r.covariance << std::stod(c[6]), std::stod(c[7]), std::stod(c[7]), std::stod(c[8]);
    r.nll = std::stod(c[9]);
    r.es = std::stod(c[10]);
    out.push_back(r);
  }
  return out;
}

std::vector<SatelliteRecord> read_satellites_csv(const fs::path& file) {
  std::vector<SatelliteRecord> out;
  for (const auto& c : read_csv(file, 11)) {
    SatelliteRecord s;
    s.epoch_index = std::stoi(c[0]);
    s.sat_id = c[1];
    s.azimuth_deg = std::stod(c[2]);
    s.elevation_deg = std::stod(c[3]);
    s.weight = std::stod(c[4]);
    s.normalized_weight = std::stod(c[5]);
    s.sd_error = std::stod(c[6]);
    s.wls_residual = std::stod(c[7]);
    s.reference = c[8] == "1";
    s.no_reference = c[9] == "1";
    s.contamination = std::stod(c[10]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cdfgo
