#include "cdfgo/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "cdfgo/error.hpp"

namespace cdfgo {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::pass() const {
  for (const auto& r : rows) {
    if (!r.pass) return false;
  }
  return !rows.empty();
}

std::string GradcheckReport::table() const {
  std::string out =
      "group                                  checked  retried  max_rel_err  status  worst\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-38s %7d  %7d  %11.3e  %-6s  %s\n", r.group.c_str(),
                  r.checked, r.retried, r.max_relative_error, r.pass ? "ok" : "FAIL",
                  r.worst.c_str());
    out += buf;
  }
  return out;
}

namespace {

double central(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

class RowBuilder {
 public:
  // loss_scale: |L| at the base point; central differences of L carry
  // roundoff ~ eps |L| / h, so the floor grows with it.
  RowBuilder(std::string group, const GradcheckOptions& o, double loss_scale = 1.0)
      : o_(o), floor_(o.denominator_floor * std::max(1.0, std::abs(loss_scale))) {
    row_.group = std::move(group);
  }
  void add(double analytic, double numeric, const std::string& label) {
    const double e = relative_error(analytic, numeric, floor_);
    ++row_.checked;
    if (!std::isfinite(row_.max_relative_error)) return;
    if (row_.checked == 1 || !(e <= row_.max_relative_error)) {
      row_.max_relative_error = e;
      row_.worst = label;
    }
  }
  // Central difference with step h; an entry that disagrees is retried once
  // with h / 10, since a LeakyReLU kink inside [x - h, x + h] spoils the
  // first estimate while a wrong analytic gradient disagrees at both steps.
  void add_fd(double analytic, const std::function<double(double)>& f, double x, double h,
              const std::string& label) {
    double n = central(f, x, h);
    if (relative_error(analytic, n, floor_) > o_.tolerance) {
      const double n2 = central(f, x, h / 10.0);
      if (relative_error(analytic, n2, floor_) < relative_error(analytic, n, floor_)) n = n2;
      ++row_.retried;
    }
    add(analytic, n, label);
  }
  GradcheckRow finish() {
    row_.pass = row_.checked > 0 && row_.max_relative_error <= o_.tolerance;
    return row_;
  }

 private:
  const GradcheckOptions& o_;
  double floor_;
  GradcheckRow row_;
};


void check_loss_gradients(const EnPredictive& base, const char* name,
                          const std::function<LossValue(const EnPredictive&)>& loss,
                          const GradcheckOptions& o, GradcheckReport& report) {
  const LossValue a = loss(base);
  RowBuilder mean_row(std::string("loss/") + name + " d_mean", o);
  for (int k = 0; k < 2; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(base.mean(k)));
    const double n = central(
        [&](double v) {
          EnPredictive p = base;
          p.mean(k) = v;
          return loss(p).value;
        },
        base.mean(k), h);
    mean_row.add(a.d_mean(k), n, "mean[" + std::to_string(k) + "]");
  }
  report.rows.push_back(mean_row.finish());

  RowBuilder cov_row(std::string("loss/") + name + " d_cov", o);
  const double h = 1e-6 * base.covariance.diagonal().maxCoeff();
  for (int i = 0; i < 2; ++i) {
    for (int j = i; j < 2; ++j) {
      // A symmetric perturbation of the (i, j) and (j, i) entries together.
      const double n = central(
          [&](double v) {
            EnPredictive p = base;
            p.covariance(i, j) = v;
            p.covariance(j, i) = v;
            return loss(p).value;
          },
          base.covariance(i, j), h);
      const double analytic = i == j ? a.d_cov(i, i) : a.d_cov(i, j) + a.d_cov(j, i);
      cov_row.add(analytic, n, "cov[" + std::to_string(i) + "," + std::to_string(j) + "]");
    }
  }
  report.rows.push_back(cov_row.finish());
}

}  // namespace

GradcheckReport run_gradcheck(const WgnModel& model, const PreparedRun& run, int start,
                              const GradcheckOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckReport report;

  WindowSettings ws;
  ws.solver.tolerance = 0.0;  // always run max_iterations
  ws.solver.corrupt_backward_jacobian = o.corrupt_jacobian;
  ws.loss.rng_seed = o.seed;
  const std::uint64_t seed = derive_seed(o.seed, static_cast<std::uint64_t>(start));

  // Losses on the predictive of the window's first epoch.
  {
    ws.objective = Objective::Nll;
    const Eigen::VectorXd info = [&] {
      Eigen::VectorXd all;
      std::vector<double> v;
      for (int e = start; e < start + ws.length; ++e) {
        const auto w = model.forward(epoch_features(run.epochs[e], model)).information;
        v.insert(v.end(), w.data(), w.data() + w.size());
      }
      return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }();
    const WindowResult r = window_loss_for_information(run, start, info, ws, seed, false);
    EnPredictive pred;
    pred.mean = r.solve.per_epoch_en[0].mean;
    pred.covariance = r.solve.per_epoch_en[0].covariance;
    pred.ground_truth = run.epochs[start].truth_position->head<2>();
    check_loss_gradients(pred, "nll", [](const EnPredictive& p) { return nll(p); }, o, report);
    check_loss_gradients(
        pred, "es",
        [&](const EnPredictive& p) { return energy_score_mc(p, ws.loss.mc_samples, seed); }, o,
        report);

    // dL/dOmega through solver and loss.
    const std::pair<Objective, const char*> objectives[] = {
        {Objective::Nll, "d_information/nll"},
        {Objective::Es, "d_information/es"},
        {Objective::Combined, "d_information/combined"}};
    for (const auto& [objective, label] : objectives) {
      ws.objective = objective;
      const WindowResult base = window_loss_for_information(run, start, info, ws, seed, true);
      RowBuilder row(label, o, base.loss);
      for (Eigen::Index i = 0; i < info.size(); ++i) {
        const double h = o.information_step * info(i);
        row.add_fd(
            base.d_information(i),
            [&](double v) {
              Eigen::VectorXd p = info;
              p(i) = v;
              return window_loss_for_information(run, start, p, ws, seed, false).loss;
            },
            info(i), h, "omega[" + std::to_string(i) + "]");
      }
      report.rows.push_back(row.finish());
    }
  }

  if (o.check_parameters) {
    ws.objective = Objective::Combined;
    WgnModel probe = model;
    WgnGradients grads = probe.zero_gradients();
    const double base_loss = window_loss(probe, run, start, ws, seed, &grads).loss;
    for (std::size_t t = 0; t < probe.tensors().size(); ++t) {
      Eigen::MatrixXd& value = probe.tensors()[t].value;
      RowBuilder row("wgn/" + probe.tensors()[t].name, o, base_loss);
      const Eigen::Index count = value.size();
      const Eigen::Index stride =
          o.max_entries_per_tensor > 0 && count > o.max_entries_per_tensor
              ? (count + o.max_entries_per_tensor - 1) / o.max_entries_per_tensor
              : 1;
      for (Eigen::Index k = 0; k < count; k += stride) {
        double& x = value.data()[k];
        const double x0 = x;
        row.add_fd(
            grads[t].data()[k],
            [&](double v) {
              x = v;
              return window_loss(probe, run, start, ws, seed, nullptr).loss;
            },
            x0, o.parameter_step, "[" + std::to_string(k) + "]");
        x = x0;
      }
      report.rows.push_back(row.finish());
    }
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace cdfgo
