// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evdi/evdi.hpp"

namespace evdi::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

/// Bad flag combination or value detected before any work starts.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  int threads = -1;  // -1: not given on the command line
  std::uint64_t seed = 0;
  std::string log_level = "info";
};

struct SimulateOptions {
  std::string frames;
  double fps = 1000.0;
  double exposure_ms = 40.0;
  double period_ms = 40.0;
  double theta = 0.2;
  std::string mode = "mono";
  std::string pattern = "RGGB";
  std::string gamma = "power:2.2";
  std::string out;
};

struct DeblurOptions {
  std::string manifest;
  std::size_t view = 0;
  std::optional<double> theta;
  std::string out;
  std::optional<Timestamp> at;
  bool demosaic = false;
};

struct ReconstructOptions {
  std::string manifest;
  std::size_t view = 0;
  double rate = 0.0;
  std::optional<double> theta;
  std::string out;
};

struct CalibrateOptions {
  std::string manifest;
  bool fit_response = false;
  bool asymmetric = false;
  double lo = 0.05;
  double hi = 1.0;
  std::string out;
};

struct EvaluateOptions {
  std::string pred;
  std::string gt;
  std::string out;
  std::string metric_domain = "gamma";
  std::string gamma = "power:2.2";
};

struct PriorOptions {
  std::string manifest;
  std::string out;
};

namespace detail {

inline void setup_logging(const std::string& level) {
  auto logger = spdlog::get("evdi");
  if (!logger) logger = spdlog::stderr_color_mt("evdi");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") {
    throw UsageError("unknown log level '" + level + "'");
  }
  spdlog::set_level(lvl);
}

inline unsigned resolve_threads(int flag) {
  if (flag >= 0) return static_cast<unsigned>(flag);
  if (const char* env = std::getenv("EVDI_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 0) throw UsageError(std::string("EVDI_THREADS must be a nonnegative integer, got '") + env + "'");
    return static_cast<unsigned>(v);
  }
  return 0;
}

inline Timestamp ms_to_us(double ms) { return static_cast<Timestamp>(std::llround(ms * 1000.0)); }

inline GammaCurve gamma_flag(const std::string& text) {
  try {
    return parse_gamma(text);
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
}

inline DatasetManifest load_manifest_for(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("manifest '" + path + "' does not exist");
  return read_manifest(path);
}

inline void check_view_index(const DatasetManifest& m, std::size_t view) {
  if (view >= m.views.size()) {
    throw UsageError(evdi::detail::concat("view ", view, " out of range: manifest has ", m.views.size(),
                                          " views"));
  }
}

inline ThresholdConfig thresholds_for(const DatasetManifest& m, const std::optional<double>& theta) {
  if (!theta) return m.thresholds();
  if (!(*theta > 0.0)) throw UsageError("--theta must be positive");
  return ThresholdConfig::symmetric(*theta);
}

inline ImageBuffer encode_for_display(const ImageBuffer& linear, const GammaCurve& gamma) {
  ImageBuffer clamped = linear;
  for (double& v : clamped.data()) v = std::clamp(v, 0.0, 1.0);
  return to_gamma(clamped, gamma);
}

inline std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = evdi::detail::lower_extension(entry.path());
    if (ext == ".png" || ext == ".pfm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<Timestamp> read_timestamps(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<Timestamp> ts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = evdi::detail::strip_cr(line);
    if (line.empty()) continue;
    Timestamp t = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), t);
    if (ec != std::errc{} || ptr != line.data() + line.size()) {
      throw FormatError(evdi::detail::concat(path.string(), ":", line_no, ": bad timestamp '", line, "'"));
    }
    ts.push_back(t);
  }
  return ts;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_simulate(const SimulateOptions& o) {
  if (!fs::is_directory(o.frames)) throw UsageError("frames directory '" + o.frames + "' does not exist");
  if (o.mode != "mono" && o.mode != "bayer") throw UsageError("--mode must be 'mono' or 'bayer'");
  const GammaCurve gamma = detail::gamma_flag(o.gamma);
  SimulatorConfig cfg;
  cfg.thresholds = ThresholdConfig::symmetric(o.theta);
  cfg.mode = o.mode == "bayer" ? EventMode::Bayer : EventMode::Luma;
  try {
    cfg.pattern = parse_bayer_pattern(o.pattern);
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }

  const fs::path dir(o.frames);
  const auto files = detail::list_images(dir);
  if (files.size() < 2) {
    throw UsageError(evdi::detail::concat("frames directory '", o.frames, "' holds ", files.size(),
                                          " images, need at least 2"));
  }
  std::vector<Timestamp> ts;
  if (fs::exists(dir / "timestamps.txt")) {
    ts = detail::read_timestamps(dir / "timestamps.txt");
    if (ts.size() != files.size()) {
      throw FormatError(evdi::detail::concat((dir / "timestamps.txt").string(), ": ", ts.size(),
                                             " timestamps for ", files.size(), " frames"));
    }
  } else {
    for (std::size_t k = 0; k < files.size(); ++k) {
      ts.push_back(static_cast<Timestamp>(std::llround(static_cast<double>(k) * 1e6 / o.fps)));
    }
  }
  std::optional<PoseTrack> track;
  if (fs::exists(dir / "poses.csv")) track = read_poses(dir / "poses.csv");

  std::vector<Frame> frames;
  frames.reserve(files.size());
  for (std::size_t k = 0; k < files.size(); ++k) {
    Frame f;
    f.t = ts[k];
    f.image = read_linear_image(files[k], gamma);
    if (track) f.pose = interpolate_pose(*track, static_cast<double>(ts[k]));
    frames.push_back(std::move(f));
  }
  spdlog::info("loaded {} frames from {}", frames.size(), o.frames);
  const FrameSequence seq(std::move(frames));
  RenderOptions ropts;
  ropts.gamma = gamma;
  const DatasetManifest m =
      render_dataset(seq, detail::ms_to_us(o.exposure_ms), detail::ms_to_us(o.period_ms), cfg, o.out, ropts);
  const EventStream events = load_events(m);
  std::cout << "views: " << m.views.size() << "\n"
            << "events: " << events.size() << "\n";
  return kOk;
}

inline int cmd_deblur(const DeblurOptions& o) {
  const DatasetManifest m = detail::load_manifest_for(o.manifest);
  detail::check_view_index(m, o.view);
  const ThresholdConfig thr = detail::thresholds_for(m, o.theta);
  const EventStream events = load_events(m);
  const LoadedView v = load_view(m, o.view);
  const EventLayout layout{m.bayer};
  ImageBuffer latent;
  if (o.at) {
    const std::vector<Timestamp> q{*o.at};
    latent = reconstruct_video(v.blur, events, v.t_mid, m.exposure_us, thr, q, layout).front();
  } else {
    latent = edi_deblur(v.blur, events, v.t_mid, m.exposure_us, thr, layout);
  }
  if (o.demosaic && m.bayer && latent.channels() == 1) latent = demosaic_bilinear(latent, *m.bayer);
  fs::path stem(o.out);
  stem.replace_extension();
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  write_pfm(fs::path(stem).replace_extension(".pfm"), latent);
  write_png(fs::path(stem).replace_extension(".png"), detail::encode_for_display(latent, m.gamma));
  spdlog::info("wrote {}.pfm and {}.png", stem.string(), stem.string());
  return kOk;
}

/// Query times at the centers of `n` equal cells spanning the exposure.
inline std::vector<Timestamp> exposure_cell_centers(Timestamp t_mid, Timestamp tau, std::size_t n) {
  const double lo = static_cast<double>(t_mid) - static_cast<double>(tau) / 2.0;
  const double cell = static_cast<double>(tau) / static_cast<double>(n);
  std::vector<Timestamp> ts;
  ts.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    ts.push_back(static_cast<Timestamp>(std::llround(lo + (static_cast<double>(k) + 0.5) * cell)));
  }
  return ts;
}

inline int cmd_reconstruct(const ReconstructOptions& o) {
  if (!(o.rate > 0.0)) throw UsageError("--rate must be positive");
  const DatasetManifest m = detail::load_manifest_for(o.manifest);
  detail::check_view_index(m, o.view);
  const ThresholdConfig thr = detail::thresholds_for(m, o.theta);
  const EventStream events = load_events(m);
  const LoadedView v = load_view(m, o.view);
  const auto n = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(o.rate * static_cast<double>(m.exposure_us) / 1e6)));
  const auto ts = exposure_cell_centers(v.t_mid, m.exposure_us, n);
  const auto frames = reconstruct_video(v.blur, events, v.t_mid, m.exposure_us, thr, ts, EventLayout{m.bayer});
  const fs::path out(o.out);
  fs::create_directories(out);
  std::string listing;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    write_pfm(out / evdi::detail::numbered_name("frame_", k, ".pfm"), frames[k]);
    listing += std::to_string(ts[k]) + "\n";
  }
  evdi::detail::write_text(out / "timestamps.txt", listing);

  ImageBuffer mean(v.blur.width(), v.blur.height(), v.blur.channels(), Domain::Linear, 0.0);
  for (const auto& f : frames) {
    for (std::size_t i = 0; i < mean.data().size(); ++i) mean.data()[i] += f.data()[i];
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < mean.data().size(); ++i) {
    const double avg = mean.data()[i] / static_cast<double>(frames.size());
    const double ref = v.blur.data()[i];
    worst = std::max(worst, std::abs(avg - ref) / std::max(ref, 1e-3));
  }
  std::cout << "frames: " << frames.size() << "\n"
            << "reblur_max_rel_error: " << evdi::detail::exact_number(worst) << "\n";
  return kOk;
}

inline int cmd_calibrate(const CalibrateOptions& o, std::uint64_t seed) {
  const DatasetManifest m = detail::load_manifest_for(o.manifest);
  if (m.views.size() < 2) {
    throw UsageError(evdi::detail::concat("calibration needs at least 2 views, manifest has ", m.views.size()));
  }
  if (!(o.lo > 0.0) || !(o.lo < o.hi)) {
    throw UsageError(evdi::detail::concat("invalid threshold bracket [", o.lo, ", ", o.hi, "]"));
  }
  const CalibrationDataset d = load_calibration_dataset(m);
  ThresholdFitOptions topts;
  topts.lo = o.lo;
  topts.hi = o.hi;
  topts.asymmetric = o.asymmetric;
  CalibrationReport report = fit_threshold(d, topts);
  if (o.fit_response) {
    ResponseFitOptions ropts;
    ropts.seed = seed;
    report.response = fit_response(d, report.thresholds(), ropts);
  }
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  evdi::detail::write_text(out, calibration_report_to_json(report).dump(2) + "\n");
  std::cout << "theta_hat: " << evdi::detail::exact_number(report.theta_hat) << "\n";
  if (report.theta_neg_hat) std::cout << "theta_neg_hat: " << evdi::detail::exact_number(*report.theta_neg_hat) << "\n";
  if (!report.identifiable) std::cout << "warning: loss flat, theta unidentifiable\n";
  return kOk;
}

struct EvaluationRow {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

inline std::vector<EvaluationRow> evaluate_dirs(const fs::path& pred, const fs::path& gt,
                                                bool gamma_domain, const GammaCurve& gamma) {
  std::map<std::string, fs::path> p_files;
  std::map<std::string, fs::path> g_files;
  for (const auto& f : detail::list_images(pred)) p_files[f.stem().string()] = f;
  for (const auto& f : detail::list_images(gt)) g_files[f.stem().string()] = f;
  std::vector<std::string> only_pred;
  std::vector<std::string> only_gt;
  for (const auto& [k, _] : p_files) {
    if (!g_files.count(k)) only_pred.push_back(k);
  }
  for (const auto& [k, _] : g_files) {
    if (!p_files.count(k)) only_gt.push_back(k);
  }
  if (!only_pred.empty() || !only_gt.empty()) {
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
      return s.empty() ? std::string("(none)") : s;
    };
    throw FormatError("image sets differ; only in pred: " + join(only_pred) + "; only in gt: " + join(only_gt));
  }
  if (p_files.empty()) throw FormatError("no images found in '" + pred.string() + "'");
  std::vector<EvaluationRow> rows;
  for (const auto& [name, ppath] : p_files) {
    ImageBuffer a = read_linear_image(ppath, gamma);
    ImageBuffer b = read_linear_image(g_files.at(name), gamma);
    if (gamma_domain) {
      a = detail::encode_for_display(a, gamma);
      b = detail::encode_for_display(b, gamma);
    }
    rows.push_back({name, psnr(a, b), ssim(a, b)});
  }
  return rows;
}

inline int cmd_evaluate(const EvaluateOptions& o) {
  if (o.metric_domain != "gamma" && o.metric_domain != "linear") {
    throw UsageError("--metric-domain must be 'gamma' or 'linear'");
  }
  if (!fs::is_directory(o.pred)) throw UsageError("prediction directory '" + o.pred + "' does not exist");
  if (!fs::is_directory(o.gt)) throw UsageError("ground-truth directory '" + o.gt + "' does not exist");
  const GammaCurve gamma = detail::gamma_flag(o.gamma);
  const auto rows = evaluate_dirs(o.pred, o.gt, o.metric_domain == "gamma", gamma);
  double mp = 0.0;
  double ms = 0.0;
  for (const auto& r : rows) {
    mp += r.psnr;
    ms += r.ssim;
  }
  mp /= static_cast<double>(rows.size());
  ms /= static_cast<double>(rows.size());

  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream table;
  table << std::fixed;
  table << std::left << std::setw(static_cast<int>(width)) << "image" << "  " << std::right << std::setw(9)
        << "psnr_db" << "  " << std::setw(8) << "ssim" << "\n";
  auto line = [&](const std::string& name, double p, double s) {
    table << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right << std::setw(9)
          << std::setprecision(4) << p << "  " << std::setw(8) << std::setprecision(6) << s << "\n";
  };
  for (const auto& r : rows) line(r.name, r.psnr, r.ssim);
  line("mean", mp, ms);

  std::string csv = "image,psnr_db,ssim\n";
  for (const auto& r : rows) {
    csv += r.name + "," + evdi::detail::exact_number(r.psnr) + "," + evdi::detail::exact_number(r.ssim) + "\n";
  }
  csv += "mean," + evdi::detail::exact_number(mp) + "," + evdi::detail::exact_number(ms) + "\n";

  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  evdi::detail::write_text(out, table.str());
  fs::path csv_path = fs::path(out).replace_extension(".csv");
  if (csv_path == out) csv_path = o.out + ".csv";
  evdi::detail::write_text(csv_path, csv);
  std::cout << table.str();
  return kOk;
}

inline int cmd_prior(const PriorOptions& o) {
  const DatasetManifest m = detail::load_manifest_for(o.manifest);
  const auto written = edi_prior_images(m, o.out);
  std::cout << "priors: " << written.size() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
  CLI::App app{"Event-aided deblurring, simulation and calibration toolkit", "evdi"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--threads", g.threads, "Worker threads, 0 = auto (env EVDI_THREADS)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "Seed for all sampling");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, critical or off");

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Render a blurry-view dataset with events from a frame sequence");
  s->add_option("--frames", sim.frames, "Directory of numbered PNG/PFM frames")->required();
  s->add_option("--fps", sim.fps, "Frame rate when no timestamps.txt is present")->check(CLI::PositiveNumber);
  s->add_option("--exposure-ms", sim.exposure_ms, "Exposure time")->check(CLI::PositiveNumber);
  s->add_option("--period-ms", sim.period_ms, "Time between blurry views")->check(CLI::PositiveNumber);
  s->add_option("--theta", sim.theta, "Contrast threshold")->check(CLI::PositiveNumber);
  s->add_option("--mode", sim.mode, "mono or bayer");
  s->add_option("--pattern", sim.pattern, "Bayer layout: RGGB, GRBG, GBRG or BGGR");
  s->add_option("--gamma", sim.gamma, "Transfer curve of PNG frames: srgb or power:G");
  s->add_option("--out", sim.out, "Output dataset directory")->required();

  DeblurOptions deb;
  auto* d = app.add_subcommand("deblur", "Deblur one view");
  d->add_option("--manifest", deb.manifest)->required();
  d->add_option("--view", deb.view)->required();
  d->add_option("--theta", deb.theta, "Override the manifest threshold");
  d->add_option("--out", deb.out, "Output path stem; writes .pfm and .png")->required();
  d->add_option("--at", deb.at, "Latent timestamp in microseconds (default: mid-exposure)");
  d->add_flag("--demosaic", deb.demosaic, "Demosaic Bayer output");

  ReconstructOptions rec;
  auto* r = app.add_subcommand("reconstruct", "Latent video across one exposure");
  r->add_option("--manifest", rec.manifest)->required();
  r->add_option("--view", rec.view)->required();
  r->add_option("--rate", rec.rate, "Frames per second")->required();
  r->add_option("--theta", rec.theta, "Override the manifest threshold");
  r->add_option("--out", rec.out, "Output directory")->required();

  CalibrateOptions cal;
  auto* c = app.add_subcommand("calibrate", "Estimate the contrast threshold and response curve");
  c->add_option("--manifest", cal.manifest)->required();
  c->add_flag("--fit-response", cal.fit_response, "Also fit the per-polarity response curve");
  c->add_flag("--asymmetric", cal.asymmetric, "Fit the negative threshold separately");
  c->add_option("--lo", cal.lo, "Search bracket lower end");
  c->add_option("--hi", cal.hi, "Search bracket upper end");
  c->add_option("--out", cal.out, "Report path (JSON)")->required();

  EvaluateOptions ev;
  auto* e = app.add_subcommand("evaluate", "PSNR and SSIM between two image directories");
  e->add_option("--pred", ev.pred)->required();
  e->add_option("--gt", ev.gt)->required();
  e->add_option("--out", ev.out, "Text table path; a .csv is written next to it")->required();
  e->add_option("--metric-domain", ev.metric_domain, "gamma or linear");
  e->add_option("--gamma", ev.gamma, "Transfer curve: srgb or power:G");

  PriorOptions pri;
  auto* p = app.add_subcommand("prior", "Write the double-integral latent of every view");
  p->add_option("--manifest", pri.manifest)->required();
  p->add_option("--out", pri.out, "Output directory")->required();

  std::vector<std::string> argv_storage = args;
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    detail::setup_logging(g.log_level);
    set_num_threads(detail::resolve_threads(g.threads));
    if (*s) return cmd_simulate(sim);
    if (*d) return cmd_deblur(deb);
    if (*r) return cmd_reconstruct(rec);
    if (*c) return cmd_calibrate(cal, g.seed);
    if (*e) return cmd_evaluate(ev);
    if (*p) return cmd_prior(pri);
  } catch (const UsageError& ex) {
    spdlog::error("{}", ex.what());
    return kUsage;
  } catch (const InternalError& ex) {
    spdlog::critical("internal error: {}", ex.what());
    return kInternal;
  } catch (const ArgumentError& ex) {
    spdlog::error("{}", ex.what());
    return kData;
  } catch (const RangeError& ex) {
    spdlog::error("{}", ex.what());
    return kData;
  } catch (const std::runtime_error& ex) {
    spdlog::error("{}", ex.what());
    return kData;
  } catch (const std::exception& ex) {
    spdlog::critical("internal error: {}", ex.what());
    return kInternal;
  }
  return kUsage;
}

}  // namespace evdi::cli
