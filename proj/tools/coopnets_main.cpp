#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "coopnets/commands.hpp"

using namespace coopnets;

int main(int argc, char** argv) {
  CLI::App app{"Cooperative training of a descriptor and a generator network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "coopnets 0.1.0");

  TrainArgs train;
  std::string train_mode;
  std::string train_resume, train_out, train_data;
  std::uint64_t train_iterations = 0;
  auto* t = app.add_subcommand("train", "Train from a config file or bundled preset");
  t->add_option("config", train.config, "Config file or preset name (texture, object, face, scene, toy2d, linear)")
      ->required();
  t->add_option("--mode", train_mode, "coopnets | descriptor | generator (default: from the config)")
      ->check(CLI::IsMember({"coopnets", "descriptor", "generator"}));
  t->add_option("--resume", train_resume, "Continue from a checkpoint");
  t->add_option("--iterations", train_iterations, "Override training.iterations");
  t->add_option("--out", train_out, "Output directory (default: output.dir)");
  t->add_option("--data", train_data, "Override dataset.path");
  t->add_option("--set", train.overrides, "section.key=value override, repeatable");
  t->add_option("--threads", train.threads, "Worker threads")->check(CLI::PositiveNumber);
  t->add_flag("--quiet,-q", train.quiet, "No progress output");

  SampleArgs sample;
  std::string sample_ckpt, sample_out = sample.out.string();
  double sample_step = 0.0;
  auto* s = app.add_subcommand("sample", "Draw samples from a trained checkpoint");
  s->add_option("checkpoint", sample_ckpt, "Checkpoint file")->required();
  s->add_option("--count,-n", sample.count, "Number of samples")->check(CLI::PositiveNumber);
  s->add_option("--out,-o", sample_out, "Output file; _draft and _revised are appended to the stem");
  s->add_option("--revise", sample.revise_steps, "Langevin revision steps under the descriptor");
  auto* step_opt = s->add_option("--step-size", sample_step, "Revision step size (default: from the checkpoint)");
  s->add_option("--temperature", sample.temperature, "Revision temperature");
  s->add_flag("--noise", sample.noise, "Add the generator's N(0, sigma^2) noise to the drafts");
  s->add_option("--seed", sample.seed, "Random seed");
  s->add_option("--cols", sample.cols, "Montage columns")->check(CLI::PositiveNumber);
  s->add_option("--threads", sample.threads, "Worker threads")->check(CLI::PositiveNumber);

  InpaintArgs inp;
  std::string inp_ckpt, inp_images, inp_mask_dir, inp_out = inp.out_dir.string();
  std::size_t inp_mask_size = 0;
  auto* i = app.add_subcommand("inpaint", "Complete occluded images with a trained generator");
  i->add_option("checkpoint", inp_ckpt, "Checkpoint with a generator")->required();
  i->add_option("images", inp_images, "Directory of images")->required();
  auto* mask_size_opt = i->add_option("--mask-size", inp_mask_size, "Side of a random occluded square, pixels");
  auto* mask_dir_opt = i->add_option("--mask-dir", inp_mask_dir, "Mask images, same names; nonzero = observed");
  mask_size_opt->excludes(mask_dir_opt);
  i->add_option("--out,-o", inp_out, "Output directory");
  i->add_option("--steps", inp.steps, "Langevin inference steps");
  i->add_option("--step-size", inp.step_size, "Langevin step size");
  i->add_option("--temperature", inp.temperature, "Langevin temperature");
  i->add_option("--seed", inp.seed, "Random seed");
  i->add_option("--threads", inp.threads, "Worker threads")->check(CLI::PositiveNumber);

  EvalArgs ev;
  std::string ev_out = ev.out.string();
  auto* e = app.add_subcommand("eval", "Run the oracle and trend checks");
  e->add_option("suite", ev.suite, "oracles | trends | all")->required()->check(
      CLI::IsMember({"oracles", "trends", "all"}));
  e->add_option("--out,-o", ev_out, "Report CSV");
  e->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? exit_code::ok : exit_code::usage;
  }

  if (*t) {
    if (!train_mode.empty()) train.mode = parse_train_mode(train_mode);
    if (!train_resume.empty()) train.resume = train_resume;
    if (t->count("--iterations") > 0) train.iterations = train_iterations;
    if (!train_out.empty()) train.out_dir = train_out;
    if (!train_data.empty()) train.data = train_data;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (*s) {
    sample.checkpoint = sample_ckpt;
    sample.out = sample_out;
    if (step_opt->count() > 0) sample.step_size = sample_step;
    return cmd_sample(sample, std::cout, std::cerr);
  }
  if (*i) {
    inp.checkpoint = inp_ckpt;
    inp.images = inp_images;
    inp.out_dir = inp_out;
    if (mask_size_opt->count() > 0) inp.mask_size = inp_mask_size;
    if (!inp_mask_dir.empty()) inp.mask_dir = inp_mask_dir;
    return cmd_inpaint(inp, std::cout, std::cerr);
  }
  ev.out = ev_out;
  return cmd_eval(ev, std::cout, std::cerr);
}
