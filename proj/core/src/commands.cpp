#include "coopnets/commands.hpp"

#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "coopnets/config.hpp"
#include "coopnets/data_io.hpp"
#include "coopnets/eval.hpp"
#include "coopnets/inpaint.hpp"
#include "coopnets/parallel.hpp"
#include "coopnets/rng.hpp"

namespace coopnets {

namespace fs = std::filesystem;

namespace {

bool image_like(const Shape& item) {
  return item.size() == 3 && (item[0] == 1 || item[0] == 3) && item[1] * item[2] > 1;
}

void write_points_csv(const Tensor& batch, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  const std::size_t dim = shape_volume(batch.item_shape());
  for (std::size_t k = 0; k < dim; ++k) out << (k ? "," : "") << 'y' << k;
  out << '\n';
  for (std::size_t i = 0; i < batch.batch_size(); ++i) {
    const auto item = batch.item_values(i);
    for (std::size_t k = 0; k < dim; ++k) out << (k ? "," : "") << fmt::format("{:.17g}", item[k]);
    out << '\n';
  }
}

/// Montage for image batches, CSV rows otherwise. `stem` has no extension.
fs::path write_batch(const Tensor& batch, std::size_t cols, const fs::path& stem, std::string ext = {}) {
  const bool image = image_like(batch.item_shape()) && ext != ".csv";
  if (!image) {
    fs::path path = stem.string() + ".csv";
    write_points_csv(batch, path);
    return path;
  }
  if (ext.empty()) ext = batch.extent(1) == 1 ? ".pgm" : ".png";
  if (ext == ".pgm" && batch.extent(1) != 1) ext = ".png";
  fs::path path = stem.string() + ext;
  save_montage(batch, cols, path);
  return path;
}

void write_populations(const ChainState& chains, std::size_t cols, const fs::path& dir, const std::string& suffix) {
  const std::pair<const Tensor*, const char*> sets[] = {
      {&chains.drafts, "s1_drafts"}, {&chains.revised, "s2_revised"}, {&chains.reconstructions, "s3_reconstructions"}};
  for (const auto& [t, name] : sets) {
    if (!t->empty()) write_batch(*t, cols, dir / fmt::format("{}_{}", name, suffix));
  }
}

Checkpoint snapshot(TrainMode mode, const TrainProgress& p) {
  Checkpoint c;
  c.mode = mode;
  if (p.descriptor) c.descriptor = *p.descriptor;
  if (p.generator) c.generator = *p.generator;
  c.config = p.config;
  c.state = p.state;
  return c;
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  set_thread_count(args.threads);

  RunConfig cfg;
  std::vector<std::string> overrides = args.overrides;
  if (args.data) overrides.push_back("dataset.path=" + args.data->string());
  try {
    cfg = load_run_config(args.config, overrides);
    if (args.iterations) cfg.training.iterations = *args.iterations;
    if (args.out_dir) cfg.output_dir = *args.out_dir;
    if (args.mode) cfg.mode = *args.mode;
    validate_run_config(cfg, cfg.mode);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_code::usage;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return exit_code::usage;
  }

  std::optional<Checkpoint> resume;
  if (args.resume) {
    try {
      resume = load_checkpoint(*args.resume);
    } catch (const std::exception& e) {
      err << "cannot resume: " << e.what() << '\n';
      return exit_code::usage;
    }
    if (resume->mode != cfg.mode) {
      err << fmt::format("cannot resume: checkpoint was written in {} mode, this run is {}\n",
                         to_string(resume->mode), to_string(cfg.mode));
      return exit_code::usage;
    }
  }

  Dataset data;
  try {
    data = build_dataset(cfg);
  } catch (const std::exception& e) {
    err << "dataset error: " << e.what() << '\n';
    return exit_code::usage;
  }

  TrainConfig tc = cfg.training;
  if (resume) {
    tc = resume->config;
    tc.iterations = cfg.training.iterations;
  }
  const bool needs_d = cfg.mode != TrainMode::generator;
  const bool needs_g = cfg.mode != TrainMode::descriptor;
  DescriptorNet descriptor;
  GeneratorNet generator;
  try {
    if (needs_d) descriptor = resume ? resume->descriptor.value() : build_descriptor(cfg);
    if (needs_g) generator = resume ? resume->generator.value() : build_generator(cfg);
  } catch (const std::bad_optional_access&) {
    err << "cannot resume: checkpoint lacks a network this mode needs\n";
    return exit_code::usage;
  }

  const fs::path dir = cfg.output_dir;
  const std::uint64_t total = tc.iterations;
  const std::uint64_t report_every = std::max<std::uint64_t>(1, total / 10);
  try {
    fs::create_directories(dir);
    MetricsCsvWriter metrics(dir / "metrics.csv", resume.has_value());

    TrainOptions options;
    if (resume) options.resume = &resume->state;
    options.on_metrics = [&](const IterationMetrics& row) {
      metrics.write(row);
      if (!args.quiet && ((row.iteration + 1) % report_every == 0 || row.iteration + 1 == total)) {
        out << fmt::format("iter {:>6}/{}  grad_norm_D {:.4g}  feature_gap {:.4g}  recon_error {:.4g}\n",
                           row.iteration + 1, total, row.grad_norm_d, row.feature_gap, row.recon_error);
      }
    };
    options.after_iteration = [&](const TrainProgress& p) {
      const std::uint64_t t = p.state.iteration;
      if (cfg.montage_period > 0 && t % cfg.montage_period == 0) {
        write_populations(p.state.chains, cfg.montage_cols, dir, fmt::format("{:06}", t));
      }
      if (cfg.checkpoint_period > 0 && t % cfg.checkpoint_period == 0) {
        save_checkpoint(snapshot(cfg.mode, p), dir / fmt::format("checkpoint_{:06}.ckpt", t));
      }
    };

    if (!args.quiet) {
      out << fmt::format("{}: {} training on {} examples ({}), {} iterations", cfg.name, to_string(cfg.mode),
                         data.size(), data.source, total);
      if (resume) out << fmt::format(", resuming at {}", resume->iteration());
      out << '\n';
    }

    Checkpoint final;
    final.mode = cfg.mode;
    final.config = tc;
    switch (cfg.mode) {
      case TrainMode::coopnets: {
        auto r = train_coopnets(std::move(descriptor), std::move(generator), data.examples, tc, options);
        final.descriptor = std::move(r.descriptor);
        final.generator = std::move(r.generator);
        final.state = std::move(r.state);
        break;
      }
      case TrainMode::descriptor: {
        auto r = train_descriptor(std::move(descriptor), data.examples, tc, options);
        final.descriptor = std::move(r.net);
        final.state = std::move(r.state);
        break;
      }
      case TrainMode::generator: {
        auto r = train_generator(std::move(generator), data.examples, tc, options);
        final.generator = std::move(r.net);
        final.state = std::move(r.state);
        break;
      }
    }
    save_checkpoint(final, dir / "checkpoint.ckpt");
    write_populations(final.state.chains, cfg.montage_cols, dir, "final");
    if (!args.quiet) out << fmt::format("wrote {}\n", (dir / "checkpoint.ckpt").string());
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return exit_code::divergence;
  } catch (const ParameterDivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return exit_code::divergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  }
  return exit_code::ok;
}

int cmd_sample(const SampleArgs& args, std::ostream& out, std::ostream& err) {
  set_thread_count(args.threads);
  if (args.count == 0) {
    err << "count must be >= 1\n";
    return exit_code::usage;
  }
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(args.checkpoint);
  } catch (const std::exception& e) {
    err << "cannot load checkpoint: " << e.what() << '\n';
    return exit_code::usage;
  }
  if (args.revise_steps > 0 && !ckpt.descriptor) {
    err << "revision needs a descriptor; this checkpoint has none\n";
    return exit_code::usage;
  }
  if (!ckpt.generator && !ckpt.descriptor) {
    err << "checkpoint holds no network\n";
    return exit_code::usage;
  }

  try {
    Tensor drafts;
    if (ckpt.generator) {
      drafts = ancestral_sample(*ckpt.generator, args.count, derive_seed(args.seed, 1), args.noise);
    } else {
      drafts = Tensor::batch_of(args.count, ckpt.descriptor->input_shape());
      Engine engine(derive_seed(args.seed, 1));
      fill_normal(engine, drafts.values(), ckpt.descriptor->reference_std());
    }
    Tensor revised = drafts;
    if (args.revise_steps > 0) {
      LangevinConfig lc = ckpt.config.langevin_d;
      lc.steps = args.revise_steps;
      lc.step_size = args.step_size.value_or(lc.step_size);
      lc.temperature = args.temperature;
      lc.seed = derive_seed(args.seed, 2);
      lc.validate();
      revised = langevin_revise(*ckpt.descriptor, drafts, lc);
    }

    const fs::path stem = args.out.parent_path() / args.out.stem();
    const std::string ext = args.out.extension().string();
    const fs::path draft_path = write_batch(drafts, args.cols, stem.string() + "_draft", ext);
    const fs::path revised_path = write_batch(revised, args.cols, stem.string() + "_revised", ext);
    out << fmt::format("wrote {} and {}\n", draft_path.string(), revised_path.string());
    if (ckpt.descriptor) {
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / double(v.size());
      };
      out << fmt::format("mean_energy_draft {:.17g}\nmean_energy_revised {:.17g}\n",
                         mean(descriptor_energies(*ckpt.descriptor, drafts)),
                         mean(descriptor_energies(*ckpt.descriptor, revised)));
    }
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return exit_code::divergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  }
  return exit_code::ok;
}

int cmd_inpaint(const InpaintArgs& args, std::ostream& out, std::ostream& err) {
  set_thread_count(args.threads);
  if (args.mask_size.has_value() == args.mask_dir.has_value()) {
    err << "give exactly one of --mask-size or --mask-dir\n";
    return exit_code::usage;
  }
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(args.checkpoint);
  } catch (const std::exception& e) {
    err << "cannot load checkpoint: " << e.what() << '\n';
    return exit_code::usage;
  }
  if (!ckpt.generator) {
    err << "inpainting needs a generator; this checkpoint has none\n";
    return exit_code::usage;
  }
  const GeneratorNet& net = *ckpt.generator;
  const Shape shape = net.output_shape();
  if (shape[1] != shape[2] || (shape[0] != 1 && shape[0] != 3)) {
    err << fmt::format("generator output {} is not a square 1- or 3-channel image\n", shape_to_string(shape));
    return exit_code::usage;
  }
  if (args.mask_size && (*args.mask_size > shape[1] || *args.mask_size > shape[2])) {
    err << fmt::format("mask {}x{} is larger than the {}x{} image\n", *args.mask_size, *args.mask_size, shape[1],
                       shape[2]);
    return exit_code::usage;
  }

  Dataset images;
  std::vector<Tensor> masks;
  try {
    images = load_images(args.images, shape[0], shape[1]);
    if (args.mask_dir) {
      const Dataset m = load_images(*args.mask_dir, shape[0], shape[1]);
      if (m.size() != 1 && m.size() != images.size()) {
        err << fmt::format("{} mask files for {} images; give one mask or one per image\n", m.size(), images.size());
        return exit_code::usage;
      }
      for (std::size_t i = 0; i < m.size(); ++i) {
        Tensor t = m.examples.item(i);
        for (double& v : t.values()) v = v > -1.0 ? 1.0 : 0.0;  // any nonzero pixel is observed
        masks.push_back(std::move(t));
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  }

  try {
    fs::create_directories(args.out_dir);
    std::ofstream csv(args.out_dir / "errors.csv");
    if (!csv) throw IoError(fmt::format("cannot write '{}'", (args.out_dir / "errors.csv").string()));
    csv << "image,occluded,error,baseline_error\n";
    double sum = 0.0;
    double base_sum = 0.0;
    std::size_t wins = 0;
    const std::string ext = shape[0] == 1 ? ".pgm" : ".png";
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Tensor image = images.examples.item(i);
      const Tensor mask = args.mask_size ? square_mask(shape, *args.mask_size, derive_seed(args.seed, i))
                                         : masks[masks.size() == 1 ? 0 : i];
      LangevinConfig lc{args.step_size, args.steps, args.temperature, derive_seed(args.seed, 0x10000 + i)};
      lc.validate();
      const InpaintOutcome r = inpaint(net, image, mask, lc);

      Tensor masked = image;
      for (std::size_t k = 0; k < masked.size(); ++k) {
        if (mask[k] == 0.0) masked[k] = -1.0;
      }
      Tensor sheet = Tensor::batch_of(3, shape);
      sheet.set_item(0, image);
      sheet.set_item(1, masked);
      sheet.set_item(2, r.completion);
      Tensor completion = Tensor::batch_of(1, shape);
      completion.set_item(0, r.completion);
      save_montage(completion, 1, args.out_dir / fmt::format("completion_{:03}{}", i, ext));
      save_montage(sheet, 3, args.out_dir / fmt::format("compare_{:03}{}", i, ext));

      csv << fmt::format("{},{},{:.17g},{:.17g}\n", i, r.occluded, r.error, r.baseline_error);
      sum += r.error;
      base_sum += r.baseline_error;
      if (r.occluded == 0 || r.error < r.baseline_error) ++wins;
    }
    const double n = double(images.size());
    out << fmt::format("{} images: mean recovery error {:.6f}, mean-fill baseline {:.6f}, better than baseline on {}\n",
                       images.size(), sum / n, base_sum / n, wins);
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return exit_code::divergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  }
  return exit_code::ok;
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  set_thread_count(args.threads);
  std::vector<int> ids;
  try {
    ids = suite_criteria(args.suite);
  } catch (const std::invalid_argument& e) {
    err << e.what() << '\n';
    return exit_code::usage;
  }
  std::vector<CriterionResult> results;
  std::vector<std::string> failed;
  for (int id : ids) {
    results.push_back(run_criterion(id));
    out << results.back().summary() << '\n' << std::flush;
    for (const auto& c : results.back().checks) {
      if (!c.passed) failed.push_back(c.name);
    }
  }
  try {
    write_report(args.out, results);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  }
  if (!failed.empty()) {
    err << "failed checks:";
    for (const auto& f : failed) err << ' ' << f;
    err << '\n';
    return exit_code::eval_failure;
  }
  return exit_code::ok;
}

}  // namespace coopnets
