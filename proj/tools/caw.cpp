// caw: correctly-aligned-windows toolkit.
// Subcommands: check-align, shear-audit, schedule, diffuse, scaling.
// Exit codes: 0 success, 1 usage/config error, 2 infeasibility or
// verification failure (witness recorded in the manifest).

#include <caw/chain.hpp>
#include <caw/config.hpp>
#include <caw/diffusion.hpp>
#include <caw/io.hpp>
#include <caw/log.hpp>
#include <caw/schedule.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <thread>

namespace {

using namespace caw;

nlohmann::json witness_json(const IneqRecord& w) {
  return {{"name", w.name}, {"small", w.small}, {"large", w.large}};
}

ChainSchedule schedule_from_config(const RunConfig& cfg) {
  const ModelParams& m = cfg.model;
  const OrderParams o = compute_orders(m.sigma, m.tau, m.upsilon, m.k);
  const SchedConstants sc = SchedConstants::from_model(
      m, make_jump(m, Vec::Zero(m.dim()), Vec::Zero(m.dim())).constants());
  SchedOptions sopt;
  sopt.eta = cfg.eta;
  sopt.slack_floor = cfg.slack_floor;
  sopt.hat_gamma_floor = cfg.hat_gamma_floor;
  sopt.orbit_tol = cfg.tol;
  sopt.N_min = m.N_plus;
  sopt.M_min = m.N_minus;
  const double spacing = cfg.spacing_scale * std::pow(m.epsilon, m.upsilon);
  const std::vector<Vec> leaves = make_leaves(m.n, 0.05, spacing, cfg.leaves);
  ChainSchedule chain = build_chain(o, sc, m.epsilon, leaves, sopt);
  if (cfg.extended) {
    const ExtendedSystem ext = make_extended(m);
    chain = extend_chain(std::move(chain), ext, cfg.a_star, cfg.K_cap);
  }
  return chain;
}

std::string orbit_to_csv(const OrbitRecord& rec, Index m, Index n, Index ell1, Index ell2) {
  std::vector<std::string> header{"link", "stage", "step"};
  const auto coords = [&](const std::string& base, Index cnt) {
    for (Index i = 0; i < cnt; ++i) header.push_back(base + std::to_string(i));
  };
  coords("s", m);
  coords("u", m);
  coords("q", n);
  coords("p", n);
  coords("theta", ell1);
  coords("xi", ell2);
  header.push_back("residual");
  header.push_back("leaf_distance");
  CsvWriter csv(header);
  std::size_t leaf_i = 0;
  for (std::size_t i = 0; i < rec.points.size(); ++i) {
    std::vector<std::string> row{std::to_string(rec.link_of_point[i]), rec.stage_of_point[i],
                                 std::to_string(rec.step_of_point[i])};
    for (Index c = 0; c < rec.points[i].size(); ++c) row.push_back(fmt_double(rec.points[i][c]));
    row.push_back(i == 0 ? "" : fmt_double(rec.residuals[i - 1]));
    if (rec.stage_of_point[i] == "tilde" && leaf_i < rec.leaf_distances.size())
      row.push_back(fmt_double(rec.leaf_distances[leaf_i++]));
    else
      row.push_back("");
    csv.row(row);
  }
  return csv.str();
}

int finish(Manifest& man, const std::string& out_path, int code) {
  man.exit_code = code;
  man.save(out_path + ".manifest.json");
  return code;
}

int cmd_schedule(const std::string& config_path, long leaves_override, const std::string& out) {
  RunConfig cfg = load_run_config(config_path);
  if (leaves_override > 0) cfg.leaves = leaves_override;
  Manifest man;
  man.subcommand = "schedule";
  man.config_hash = fnv1a64_hex(cfg.raw);
  man.outputs = {out};
  WallClock clock;
  try {
    const ChainSchedule chain = schedule_from_config(cfg);
    atomic_write_file(out, to_json(chain).dump(2) + "\n");
    man.wall_time_s = clock.seconds();
    std::cout << "schedule: " << chain.links.size() << " links, predicted time "
              << chain.predicted_time << "\n";
    return finish(man, out, 0);
  } catch (const InfeasibleError& e) {
    man.wall_time_s = clock.seconds();
    man.witness = witness_json(e.witness);
    log_error(e.what());
    return finish(man, out, 2);
  }
}

int cmd_diffuse(const std::string& config_path, const std::string& schedule_path,
                const std::string& out) {
  RunConfig cfg = load_run_config(config_path);
  Manifest man;
  man.subcommand = "diffuse";
  man.config_hash = fnv1a64_hex(cfg.raw);
  man.outputs = {out};
  WallClock clock;
  try {
    ChainSchedule chain;
    if (!schedule_path.empty()) {
      std::ifstream in(schedule_path);
      if (!in) throw CawError("cannot open schedule " + schedule_path);
      nlohmann::json j;
      in >> j;
      chain = chain_schedule_from_json(j);
    } else {
      chain = schedule_from_config(cfg);
    }
    DiffusionOptions dopts;
    dopts.alignment_samples = cfg.alignment_samples;
    std::string csv;
    bool ok = false;
    if (cfg.extended) {
      const ExtendedRunResult res = run_diffusion_extended(cfg.model, chain, cfg.tol, dopts);
      csv = orbit_to_csv(res.base.orbit, cfg.model.m, cfg.model.n, cfg.model.ell1, cfg.model.ell2);
      ok = res.base.orbit.success && res.in_tubes;
      man.witness = ok ? nlohmann::json(nullptr)
                       : nlohmann::json{{"name", res.in_tubes ? res.base.orbit.failure
                                                              : "xi left its tube"}};
      std::cout << "diffuse(extended): total_steps " << res.base.orbit.total_steps
                << " p_drift " << fmt_double(res.base.orbit.p_drift) << " max_xi_excursion "
                << fmt_double(res.max_xi_excursion) << "\n";
    } else {
      const DiffusionResult res = run_diffusion(cfg.model, chain, cfg.tol, dopts);
      csv = orbit_to_csv(res.orbit, cfg.model.m, cfg.model.n, 0, 0);
      ok = res.orbit.success;
      if (!ok) man.witness = {{"name", res.orbit.failure}};
      std::cout << "diffuse: total_steps " << res.orbit.total_steps << " p_drift "
                << fmt_double(res.orbit.p_drift) << "\n";
    }
    atomic_write_file(out, csv);
    man.wall_time_s = clock.seconds();
    return finish(man, out, ok ? 0 : 2);
  } catch (const AlignmentVerifyError& e) {
    man.wall_time_s = clock.seconds();
    man.witness = {{"name", "alignment"}, {"link", e.link}, {"stage", e.stage},
                   {"report", to_json(e.report)}};
    log_error(e.what());
    return finish(man, out, 2);
  } catch (const InfeasibleError& e) {
    man.wall_time_s = clock.seconds();
    man.witness = witness_json(e.witness);
    log_error(e.what());
    return finish(man, out, 2);
  }
}

int cmd_scaling(const std::string& config_path, const std::string& out, int jobs) {
  RunConfig cfg = load_run_config(config_path);
  if (cfg.epsilon_list.empty()) throw CawError("config: scaling needs epsilon_list");
  Manifest man;
  man.subcommand = "scaling";
  man.config_hash = fnv1a64_hex(cfg.raw);
  man.outputs = {out};
  WallClock clock;
  try {
    std::vector<ScalingRow> rows(cfg.epsilon_list.size());
    std::vector<std::string> errors(cfg.epsilon_list.size());
    std::atomic<std::size_t> cursor{0};
    const auto worker = [&] {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= cfg.epsilon_list.size()) return;
        try {
          const ScalingResult one = run_scaling(cfg.model, {cfg.epsilon_list[i]},
                                                cfg.drift_target, cfg.spacing_scale, cfg.eta,
                                                cfg.tol);
          rows[i] = one.rows.front();
        } catch (const CawError& e) {
          errors[i] = e.what();
        }
      }
    };
    const int nthreads = std::max(1, jobs);
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < errors.size(); ++i)
      if (!errors[i].empty()) throw CawError("epsilon " + fmt_double(cfg.epsilon_list[i]) +
                                             ": " + errors[i]);

    std::vector<double> xs, ys;
    for (const auto& rw : rows) {
      xs.push_back(rw.epsilon);
      ys.push_back(rw.steps_per_unit_drift);
    }
    const double slope = loglog_slope(xs, ys);
    CsvWriter csv({"epsilon", "total_steps", "p_drift", "fitted_slope"});
    for (const auto& rw : rows)
      csv.row({fmt_double(rw.epsilon), std::to_string(rw.total_steps), fmt_double(rw.p_drift),
               fmt_double(slope)});
    csv.save(out);
    man.wall_time_s = clock.seconds();
    std::cout << "scaling: fitted slope " << fmt_double(slope) << "\n";
    return finish(man, out, 0);
  } catch (const InfeasibleError& e) {
    man.wall_time_s = clock.seconds();
    man.witness = witness_json(e.witness);
    log_error(e.what());
    return finish(man, out, 2);
  }
}

int cmd_shear_audit(const std::string& config_path, int grid, const std::string& out) {
  RunConfig cfg = load_run_config(config_path);
  Manifest man;
  man.subcommand = "shear-audit";
  man.config_hash = fnv1a64_hex(cfg.raw);
  man.outputs = {out};
  WallClock clock;
  const ModelParams& m = cfg.model;
  const TwistMap tw = make_twist(m.n, m.epsilon, m.tau, m.k, m.C, m.nonlinear_a);
  const ShearBounds b = shear_bounds(tw, cfg.audit_gamma, cfg.audit_delta, cfg.audit_N, m.R, m.C);
  const MeasuredShear ms =
      measure_shear(tw, Vec::Zero(m.n), cfg.audit_gamma, Vec::Constant(m.n, cfg.audit_p0),
                    cfg.audit_delta, cfg.audit_N, grid);
  CsvWriter csv({"axis_j", "N", "delta_lower", "delta_measured", "omega_upper",
                 "omega_measured"});
  for (Index j = 0; j < m.n; ++j)
    csv.row({std::to_string(j), std::to_string(cfg.audit_N), fmt_double(b.delta_lower),
             fmt_double(ms.delta_measured[j]), fmt_double(b.omega_upper),
             fmt_double(ms.omega_measured)});
  csv.save(out);
  man.wall_time_s = clock.seconds();
  std::cout << "shear-audit: delta_lower " << fmt_double(b.delta_lower) << " measured "
            << fmt_double(ms.delta_measured.minCoeff()) << "\n";
  return finish(man, out, 0);
}

int cmd_check_align(const std::string& w1_path, const std::string& w2_path,
                    const std::string& map_spec, int samples, const std::string& out) {
  const auto load_window = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CawError("cannot open window file " + path);
    nlohmann::json j;
    in >> j;
    return window_from_json(j);
  };
  const Window w1 = load_window(w1_path), w2 = load_window(w2_path);
  const auto map = parse_builtin_map(map_spec);
  Manifest man;
  man.subcommand = "check-align";
  man.config_hash = fnv1a64_hex(w1_path + "|" + w2_path + "|" + map_spec);
  man.outputs = {out};
  WallClock clock;
  const AlignmentReport rep = check_linear_alignment(w1, w2, *map, samples);
  atomic_write_file(out, to_json(rep).dump(2) + "\n");
  man.wall_time_s = clock.seconds();
  std::cout << (rep.aligned ? "aligned" : "not aligned") << " margin " << fmt_double(rep.margin)
            << "\n";
  if (!rep.aligned) man.witness = to_json(rep)["witness"];
  return finish(man, out, rep.aligned ? 0 : 2);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"correctly-aligned-windows diffusion toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, schedule_path, w1_path, w2_path, map_spec;
  long leaves = 0;
  int grid = 50, jobs = 1, samples = 8;

  auto* sched = app.add_subcommand("schedule", "solve the window aspect-ratio schedule");
  sched->add_option("--config", config_path, "run configuration")->required();
  sched->add_option("--leaves", leaves, "override leaf count");
  sched->add_option("--out", out, "output schedule.json")->required();

  auto* diff = app.add_subcommand("diffuse", "run the diffusion pipeline");
  diff->add_option("--config", config_path, "run configuration")->required();
  diff->add_option("--schedule", schedule_path, "precomputed schedule.json");
  diff->add_option("--out", out, "output orbit.csv")->required();

  auto* scal = app.add_subcommand("scaling", "epsilon sweep of the diffusion time");
  scal->add_option("--config", config_path, "sweep configuration")->required();
  scal->add_option("--out", out, "output scaling.csv")->required();
  scal->add_option("--jobs", jobs, "worker threads");

  auto* shear = app.add_subcommand("shear-audit", "measured vs bounded window shearing");
  shear->add_option("--config", config_path, "run configuration")->required();
  shear->add_option("--grid", grid, "samples per axis");
  shear->add_option("--out", out, "output shear.csv")->required();

  auto* align = app.add_subcommand("check-align", "verify correct alignment of two windows");
  align->add_option("--w1", w1_path, "source window json")->required();
  align->add_option("--w2", w2_path, "target window json")->required();
  align->add_option("--map", map_spec, "builtin map, name:params")->required();
  align->add_option("--samples", samples, "grid cells per axis");
  align->add_option("--out", out, "output report json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sched->parsed()) return cmd_schedule(config_path, leaves, out);
    if (diff->parsed()) return cmd_diffuse(config_path, schedule_path, out);
    if (scal->parsed()) return cmd_scaling(config_path, out, jobs);
    if (shear->parsed()) return cmd_shear_audit(config_path, grid, out);
    if (align->parsed()) {
      if (out.empty()) out = "align_report.json";
      return cmd_check_align(w1_path, w2_path, map_spec, samples, out);
    }
  } catch (const caw::CawError& e) {
    caw::log_error(e.what());
    // configuration / usage problems exit 1; anything deeper was handled above
    return 1;
  }
  return 1;
}
