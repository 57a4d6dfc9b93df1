// Command-line front end for the spectral laboratory: sampling, constants,
// rough-distribution assembly, both solver routes, the verification battery,
// and the convergence/divergence experiments. Every run emits CSV artifacts
// plus a manifest with content checksums; SVG plots are optional derivatives
// of the CSV.
#include <cstdio>
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "pcd/harness.hpp"

namespace {

using namespace pcd;

constexpr const char* kUsage = R"(pcd - paracontrolled spectral laboratory (version 0.1.0)

usage: pcd <command> [--config FILE] [--seed N] [--out DIR] [--threads N]
           [--mode direct|paracontrolled] [--dump-every N] [--inject-fault]

commands
  sample-ou        sample Ornstein-Uhlenbeck trajectories, one per replica,
                   at the first epsilon of the schedule; writes per-snapshot
                   PCD1 files, a .jsonl sidecar, and <id>_ou_stats.csv with
                   columns: replica,time,l2,linf,mean
  renorm-constants constants along the epsilon schedule; writes
                   <id>_constants.csv with columns:
                   epsilon,truncation,c1,c2_plain,c2_block,c_combined
  phi-eps          time-dependent counter on the configured grid per epsilon;
                   writes <id>_phi.csv with columns: epsilon,time,phi
  build-rough      sample replica 0, assemble the renormalized seven-tuple
                   with lattice-exact counters; writes <id>_rough_l2.csv
                   (time,x,x2,z3,z3x,r22,r32,phi) and <id>_rough_norms.csv
                   (component,space_exponent,norm)
  solve            run one solve at the first epsilon; --mode paracontrolled
                   (default) writes <id>_picard.csv (iteration,distance,ratio)
                   and <id>_solution.csv (time,l2,linf,mean,holder); --mode
                   direct writes <id>_solution.csv for the exponential Euler
                   flow driven by the same noise realization; --dump-every N
                   additionally stores every Nth snapshot as PCD1
  verify           structural property battery; writes <id>_verify.csv
                   (check,passed,detail) and <id>_exponents.csv
                   (name,fitted,target,margin,passed); --inject-fault
                   corrupts one input as a negative control
  converge         coupled mollification-halving Cauchy experiment; writes
                   <id>_levels.csv (epsilon,c1_lattice,a,b,picard_iterations,
                   solution_sup) and <id>_gaps.csv (eps_coarse,eps_fine,d_x,
                   d_x2,d_z3,d_z3x,d_r22,d_r32,d_phi,d_rough,d_solution)
  diverge          constant-growth demonstration; writes <id>_diverge.csv
                   (epsilon,c1,eps_c1,c2_plain,c2_block,delta_c2,
                   resonant_raw,resonant_subtracted)

flags
  --config FILE    sectioned key=value experiment file (see configs/)
  --seed N         override [noise] seed
  --out DIR        override [output] dir
  --threads N      override [output] threads (0 = PCD_THREADS or hardware)
  --mode M         solve route: direct | paracontrolled
  --dump-every N   solve: store every Nth snapshot (0 = none)
  --inject-fault   verify: corrupt one check input; the battery must fail
  --help           this text

Each run writes <id>_manifest.txt listing the config hash, code version, and
an FNV-1a checksum per artifact; identical configs reproduce identical CSV
bytes. Exit codes: 0 success, 1 assertion or solver failure, 2 bad config.
)";

struct CliArgs {
  std::string command;
  std::string config_path;
  std::string mode = "paracontrolled";
  bool have_seed = false;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = -1;
  int dump_every = 0;
  bool inject_fault = false;
};

CliArgs parse_args(int argc, char** argv) {
  CliArgs a;
  if (argc < 2) throw ConfigError("missing command; try pcd --help");
  a.command = argv[1];
  if (a.command == "--help" || a.command == "-h") a.command = "help";
  for (int i = 2; i < argc; ++i) {
    const std::string flag = argv[i];
    auto need_value = [&](const char* name) -> std::string {
      if (i + 1 >= argc) throw ConfigError(std::string(name) + " needs a value");
      return argv[++i];
    };
    if (flag == "--config") a.config_path = need_value("--config");
    else if (flag == "--seed") a.seed = static_cast<std::uint64_t>(
        detail::parse_int(need_value("--seed"), "--seed")), a.have_seed = true;
    else if (flag == "--out") a.out_dir = need_value("--out");
    else if (flag == "--threads") a.threads = static_cast<int>(
        detail::parse_int(need_value("--threads"), "--threads"));
    else if (flag == "--mode") a.mode = need_value("--mode");
    else if (flag == "--dump-every") a.dump_every = static_cast<int>(
        detail::parse_int(need_value("--dump-every"), "--dump-every"));
    else if (flag == "--inject-fault") a.inject_fault = true;
    else if (flag == "--help" || flag == "-h") a.command = "help";
    else throw ConfigError("unknown flag " + flag);
  }
  return a;
}

ExperimentConfig effective_config(const CliArgs& a) {
  ExperimentConfig cfg;
  if (!a.config_path.empty()) cfg = load_experiment_config(a.config_path);
  if (a.have_seed) cfg.seed = a.seed;
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  if (a.threads >= 0) cfg.threads = a.threads;
  cfg.validate();
  return cfg;
}

OUSampler sampler_for(const ExperimentConfig& cfg, double epsilon,
                      std::uint64_t stream) {
  OUSampler smp;
  smp.spec = cfg.lattice();
  smp.mode = cfg.zero_start ? OUMode::zero_start : OUMode::stationary;
  smp.epsilon = epsilon;
  smp.seed = cfg.seed;
  smp.stream_id = stream;
  smp.intensity = cfg.intensity;
  smp.f = cfg.mollifier();
  return smp;
}

void finish(const ExperimentConfig& cfg, RunManifest& manifest,
            std::vector<std::pair<std::string, std::string>> files,
            std::chrono::steady_clock::time_point t0) {
  manifest.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_artifacts(cfg, manifest, files);
  std::cout << "wrote " << files.size() << " artifact(s) + manifest to "
            << cfg.out_dir << " (config " << hex64(manifest.config_hash) << ")\n";
}

int cmd_sample_ou(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest = start_manifest(cfg);
  const double eps = cfg.epsilons.front();
  CsvBuilder csv({"replica", "time", "l2", "linf", "mean"});
  std::filesystem::create_directories(cfg.out_dir);
  for (int r = 0; r < cfg.replicas; ++r) {
    TrajectoryField x = sample_ou(sampler_for(cfg, eps, static_cast<std::uint64_t>(r)),
                                  0.0, cfg.t_final, cfg.steps);
    char stem[64];
    std::snprintf(stem, sizeof(stem), "%s_ou_r%03d", cfg.id.c_str(), r);
    save_trajectory(x, cfg.out_dir, stem, cfg.seed, static_cast<std::uint64_t>(r), eps);
    for (int m = 0; m <= cfg.steps; ++m)
      csv.row({static_cast<double>(r), x.time(m), l2_norm(x[m]), linf_norm(x[m]),
               x[m].mean});
  }
  finish(cfg, manifest, {{cfg.id + "_ou_stats.csv", csv.str()}}, t0);
  return 0;
}

int cmd_renorm_constants(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest = start_manifest(cfg);
  const MollifierProfile f = cfg.mollifier();
  CsvBuilder csv({"epsilon", "truncation", "c1", "c2_plain", "c2_block",
                  "c_combined"});
  for (double eps : cfg.epsilons) {
    RenormConstants rc = renorm_constants(eps, f);
    const double c2p = compute_c2(eps, f, rc.truncation, C2Variant::plain);
    csv.row({eps, static_cast<double>(rc.truncation), rc.c1, c2p, rc.c2,
             rc.c_combined});
    std::cout << "epsilon " << format_full(eps) << "  c1 " << format_full(rc.c1)
              << "  c2_block " << format_full(rc.c2) << "\n";
  }
  finish(cfg, manifest, {{cfg.id + "_constants.csv", csv.str()}}, t0);
  return 0;
}

int cmd_phi_eps(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest = start_manifest(cfg);
  const MollifierProfile f = cfg.mollifier();
  std::vector<double> times(static_cast<std::size_t>(cfg.steps) + 1);
  for (int m = 0; m <= cfg.steps; ++m) times[static_cast<std::size_t>(m)] = m * cfg.dt();
  CsvBuilder csv({"epsilon", "time", "phi"});
  std::vector<double> last_t, last_phi;
  for (double eps : cfg.epsilons) {
    CounterFunction phi = compute_phi_eps(times, eps, f);
    for (std::size_t m = 0; m < times.size(); ++m)
      csv.row({eps, phi.times[m], phi.samples[m]});
    last_t = phi.times;
    last_phi = phi.samples;
  }
  std::vector<std::pair<std::string, std::string>> files = {
      {cfg.id + "_phi.csv", csv.str()}};
  if (cfg.svg)
    files.push_back({cfg.id + "_phi.svg",
                     svg_polyline(last_t, last_phi, "time-dependent counter",
                                  "t", "phi")});
  finish(cfg, manifest, files, t0);
  return 0;
}

int cmd_build_rough(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest = start_manifest(cfg);
  const double eps = cfg.epsilons.front();
  TrajectoryField x =
      sample_ou(sampler_for(cfg, eps, 0), 0.0, cfg.t_final, cfg.steps);
  WickCounters w = make_lattice_counters(cfg.lattice(), eps, cfg.mollifier(),
                                         cfg.intensity, cfg.t_final, cfg.steps,
                                         cfg.threads);
  RoughDistribution xx = build_rough_distribution(x, w.a, w.b, w.phi, cfg.K);
  CsvBuilder l2csv({"time", "x", "x2", "z3", "z3x", "r22", "r32", "phi"});
  for (int m = 0; m <= cfg.steps; ++m)
    l2csv.row({x.time(m), l2_norm(xx.x[m]), l2_norm(xx.x2[m]), l2_norm(xx.z3[m]),
               l2_norm(xx.z3x[m]), l2_norm(xx.r22[m]), l2_norm(xx.r32[m]),
               xx.phi.samples[static_cast<std::size_t>(m)]});
  const double d = cfg.K.delta, dp = cfg.K.delta_p;
  CsvBuilder ncsv({"component", "space_exponent", "norm"});
  auto nrow = [&](const char* name, const TrajectoryField& u, double alpha) {
    ncsv.row_mixed({name, format_full(alpha),
                    format_full(space_time_holder_norm(u, dp, alpha))});
  };
  nrow("x", xx.x, -0.5 - d);
  nrow("x2", xx.x2, -1.0 - d);
  nrow("z3", xx.z3, 0.5 - d);
  nrow("z3x", xx.z3x, -d);
  nrow("r22", xx.r22, -d);
  nrow("r32", xx.r32, -0.5 - d);
  ncsv.row_mixed({"phi", "-",
                  format_full(weighted_seminorm(xx.phi.samples, 0.0, cfg.dt(),
                                                WeightedSeminormSpec{cfg.K.nu,
                                                                     cfg.K.rho}))});
  std::cout << "a " << format_full(w.a) << "  b " << format_full(w.b)
            << "  phi(0) " << format_full(w.phi.samples.front()) << "\n";
  finish(cfg, manifest,
         {{cfg.id + "_rough_l2.csv", l2csv.str()},
          {cfg.id + "_rough_norms.csv", ncsv.str()}},
         t0);
  return 0;
}

int cmd_solve(const ExperimentConfig& cfg, const std::string& mode, int dump_every) {
  if (mode != "direct" && mode != "paracontrolled")
    throw ConfigError("--mode must be direct or paracontrolled");
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest = start_manifest(cfg);
  const double eps = cfg.epsilons.front();
  const LatticeSpec spec = cfg.lattice();
  TrajectoryField x =
      sample_ou(sampler_for(cfg, eps, 0), 0.0, cfg.t_final, cfg.steps);
  WickCounters w = make_lattice_counters(spec, eps, cfg.mollifier(),
                                         cfg.intensity, cfg.t_final, cfg.steps,
                                         cfg.threads);
  const SpectralField u0 = initial_condition(spec, cfg.u0_seed, cfg.u0_amplitude);
  const SolveConfig scfg = cfg.solve_config();

  TrajectoryField u(spec, 0.0, cfg.t_final, cfg.steps);
  std::vector<std::pair<std::string, std::string>> files;
  std::string status = "ok";
  if (mode == "paracontrolled") {
    RoughDistribution xx = build_rough_distribution(x, w.a, w.b, w.phi, cfg.K);
    PicardResult r = picard_solve(u0, xx, scfg);
    for (int m = 0; m <= cfg.steps; ++m)
      u[m] = axpy(1.0, x[m], r.solution.phi[m]);
    CsvBuilder pcsv({"iteration", "distance", "ratio"});
    for (std::size_t i = 0; i < r.distances.size(); ++i)
      pcsv.row({static_cast<double>(i + 1), r.distances[i],
                i > 0 ? r.ratios[i - 1] : 0.0});
    files.push_back({cfg.id + "_picard.csv", pcsv.str()});
    std::cout << "picard converged in " << r.iterations << " iteration(s), "
              << r.bisections << " bisection(s), horizon " << format_full(r.T)
              << "\n";
  } else {
    DirectStatus st;
    u = solve_direct(axpy(1.0, x[0], u0), ou_to_forcing(x), w.a, w.b, scfg, &st);
    if (st.blowup) {
      status = "blowup";
      std::cout << "status blowup t=" << format_full(st.blowup_time)
                << " step=" << st.blowup_step << "\n";
    }
  }
  CsvBuilder scsv({"time", "l2", "linf", "mean", "holder"});
  std::vector<double> ts, ls;
  for (int m = 0; m <= cfg.steps; ++m) {
    scsv.row({u.time(m), l2_norm(u[m]), linf_norm(u[m]), u[m].mean,
              holder_norm(u[m], -cfg.z)});
    ts.push_back(u.time(m));
    ls.push_back(linf_norm(u[m]));
  }
  files.push_back({cfg.id + "_solution.csv", scsv.str()});
  if (cfg.svg)
    files.push_back({cfg.id + "_solution.svg",
                     svg_polyline(ts, ls, "solution sup norm", "t", "linf")});
  if (dump_every > 0) {
    std::filesystem::create_directories(cfg.out_dir);
    for (int m = 0; m <= cfg.steps; m += dump_every) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s_u_%05d.pcd", cfg.id.c_str(), m);
      save_snapshot(u[m], cfg.out_dir + "/" + std::string(name));
    }
  }
  finish(cfg, manifest, files, t0);
  std::cout << "status " << status << "\n";
  return 0;
}

int cmd_verify(const ExperimentConfig& cfg, bool inject_fault) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest = start_manifest(cfg);
  VerifyReport rep = run_verify(cfg, inject_fault);
  for (const VerifyCheck& c : rep.checks)
    std::cout << (c.passed ? "pass " : "FAIL ") << c.name << ": " << c.detail
              << "\n";
  for (const FittedExponent& e : rep.exponents)
    std::cout << "exponent " << e.name << " fitted " << format_full(e.fitted)
              << " target " << format_full(e.target) << " +/- "
              << format_full(e.margin) << "\n";
  finish(cfg, manifest,
         {{cfg.id + "_verify.csv", rep.csv},
          {cfg.id + "_exponents.csv", rep.exponents_csv}},
         t0);
  if (!rep.all_passed) {
    std::cerr << "verification failed:";
    for (const VerifyCheck& c : rep.checks)
      if (!c.passed) std::cerr << " " << c.name;
    std::cerr << "\n";
    return 1;
  }
  std::cout << "all checks passed\n";
  return 0;
}

int cmd_converge(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest = start_manifest(cfg);
  ConvergenceReport rep = run_convergence(cfg);
  std::cout << "eps_coarse eps_fine d_rough d_solution\n";
  for (const ConvergenceGapRow& g : rep.gaps)
    std::cout << format_full(g.eps_coarse) << " " << format_full(g.eps_fine)
              << " " << format_full(g.d_rough) << " "
              << format_full(g.d_solution) << "\n";
  std::vector<std::pair<std::string, std::string>> files = {
      {cfg.id + "_levels.csv", rep.levels_csv},
      {cfg.id + "_gaps.csv", rep.gaps_csv}};
  if (cfg.svg && !rep.gaps.empty()) {
    std::vector<double> xs, ys;
    for (const ConvergenceGapRow& g : rep.gaps) {
      xs.push_back(-std::log2(g.eps_fine));
      ys.push_back(g.d_rough);
    }
    files.push_back({cfg.id + "_gaps.svg",
                     svg_polyline(xs, ys, "coupled Cauchy gaps",
                                  "-log2(eps_fine)", "product distance")});
  }
  finish(cfg, manifest, files, t0);
  if (rep.asserted && !(rep.rough_monotone && rep.solution_monotone)) {
    std::cerr << "convergence assertion failed: rough_monotone="
              << rep.rough_monotone
              << " solution_monotone=" << rep.solution_monotone << "\n";
    return 1;
  }
  if (!rep.asserted)
    std::cout << "note: fewer than 3 halvings, monotonicity not asserted\n";
  return 0;
}

int cmd_diverge(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest = start_manifest(cfg);
  DivergenceReport rep = run_divergence_demo(cfg);
  std::cout << "epsilon c1 eps_c1 c2_block delta_c2 raw subtracted\n";
  for (const DivergenceRow& r : rep.rows)
    std::cout << format_full(r.epsilon) << " " << format_full(r.c1) << " "
              << format_full(r.eps_c1) << " " << format_full(r.c2_block) << " "
              << format_full(r.delta_c2) << " " << format_full(r.resonant_raw)
              << " " << format_full(r.resonant_subtracted) << "\n";
  std::vector<std::pair<std::string, std::string>> files = {
      {cfg.id + "_diverge.csv", rep.csv}};
  if (cfg.svg) {
    std::vector<double> xs, ys;
    for (const DivergenceRow& r : rep.rows) {
      xs.push_back(-std::log2(r.epsilon));
      ys.push_back(r.eps_c1);
    }
    files.push_back({cfg.id + "_diverge.svg",
                     svg_polyline(xs, ys, "epsilon * c1 along the schedule",
                                  "-log2(epsilon)", "eps_c1")});
  }
  finish(cfg, manifest, files, t0);
  bool ok = true;
  if (rep.c1_asserted && !rep.c1_stable) ok = false;
  if (rep.c2_asserted && !rep.c2_stable) ok = false;
  if (!ok) {
    std::cerr << "divergence assertion failed: c1_stable=" << rep.c1_stable
              << " c2_stable=" << rep.c2_stable << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    CliArgs args = parse_args(argc, argv);
    if (args.command == "help") {
      std::cout << kUsage;
      return 0;
    }
    ExperimentConfig cfg = effective_config(args);
    if (args.command == "sample-ou") return cmd_sample_ou(cfg);
    if (args.command == "renorm-constants") return cmd_renorm_constants(cfg);
    if (args.command == "phi-eps") return cmd_phi_eps(cfg);
    if (args.command == "build-rough") return cmd_build_rough(cfg);
    if (args.command == "solve") return cmd_solve(cfg, args.mode, args.dump_every);
    if (args.command == "verify") return cmd_verify(cfg, args.inject_fault);
    if (args.command == "converge") return cmd_converge(cfg);
    if (args.command == "diverge") return cmd_diverge(cfg);
    throw pcd::ConfigError("unknown command " + args.command + "; try pcd --help");
  } catch (const pcd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pcd::InvalidExponents& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pcd::TruncationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pcd::InvalidTime& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pcd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
