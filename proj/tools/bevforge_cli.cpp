#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bevforge/checkpoint.hpp"
#include "bevforge/config.hpp"
#include "bevforge/dataset.hpp"
#include "bevforge/pipeline.hpp"
#include "bevforge/synthscene.hpp"

using namespace bevforge;

namespace {

int run(int argc, char** argv) {
  CLI::App app{"bevforge: unsupervised BEV-mapping training on synthetic scenes"};
  app.require_subcommand(1);

  // gen-scenes
  auto* gen = app.add_subcommand("gen-scenes", "generate a synthetic dataset");
  int gen_count = 1;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  int gen_frames = 8;
  double gen_val_fraction = 0.25;
  double gen_stereo = 0.0;
  gen->add_option("--count", gen_count, "number of scenes")->required();
  gen->add_option("--seed", gen_seed, "master seed")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--frames", gen_frames, "frames per scene");
  gen->add_option("--val-fraction", gen_val_fraction, "validation split fraction");
  gen->add_option("--stereo-offset", gen_stereo, "second camera x offset in meters (0 = off)");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "unsupervised pretraining");
  std::string pre_config, pre_data, pre_out, pre_log, pre_resume;
  pre->add_option("--config", pre_config, "config JSON")->required();
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--out", pre_out, "output checkpoint")->required();
  pre->add_option("--log", pre_log, "training log CSV");
  pre->add_option("--resume", pre_resume, "checkpoint to resume from");

  // finetune
  auto* fin = app.add_subcommand("finetune", "label-efficient BEV finetuning");
  std::string fin_config, fin_init, fin_data, fin_out, fin_log;
  double fin_fraction = 1.0;
  fin->add_option("--config", fin_config, "config JSON")->required();
  fin->add_option("--init", fin_init, "pretrained checkpoint (omit for scratch)");
  fin->add_option("--fraction", fin_fraction, "BEV label fraction in (0,1]")->required();
  fin->add_option("--data", fin_data, "dataset directory")->required();
  fin->add_option("--out", fin_out, "output checkpoint")->required();
  fin->add_option("--log", fin_log, "training log CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_split = "val", ev_json;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "dataset split");
  ev->add_option("--json", ev_json, "metrics JSON output")->required();

  // render
  auto* ren = app.add_subcommand("render", "render depth and BEV maps for one frame");
  std::string ren_ckpt, ren_data, ren_frame, ren_out;
  ren->add_option("--ckpt", ren_ckpt, "checkpoint")->required();
  ren->add_option("--data", ren_data, "dataset directory")->required();
  ren->add_option("--frame", ren_frame, "frame id as <scene>:<index>")->required();
  ren->add_option("--out", ren_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  auto manifest_of = [](const std::string& dir) {
    return (std::filesystem::path(dir) / "manifest.json").string();
  };

  if (gen->parsed()) {
    std::vector<SceneSpec> specs;
    for (int i = 0; i < gen_count; ++i) {
      SceneSpec spec = random_scene(mix_seed(gen_seed, i), gen_frames);
      spec.second_camera_offset_x = gen_stereo;
      specs.push_back(spec);
    }
    const std::string manifest = emit_dataset(specs, gen_out, gen_val_fraction);
    std::cout << "wrote " << manifest << "\n";
  } else if (pre->parsed()) {
    Config cfg = Config::load(pre_config);
    Dataset data = Dataset::load(manifest_of(pre_data));
    Checkpoint resume;
    PretrainResult result;
    if (!pre_resume.empty()) {
      resume = load_checkpoint(pre_resume);
      result = pretrain(cfg, data, &resume);
    } else {
      result = pretrain(cfg, data);
    }
    save_checkpoint(result.checkpoint, pre_out);
    if (!pre_log.empty()) result.log.write_csv(pre_log);
    std::cout << "pretrained " << result.log.rows().size() << " steps -> " << pre_out << "\n";
  } else if (fin->parsed()) {
    Config cfg = Config::load(fin_config);
    Dataset data = Dataset::load(manifest_of(fin_data));
    FinetuneResult result;
    if (!fin_init.empty()) {
      Checkpoint init = load_checkpoint(fin_init);
      result = finetune(cfg, data, &init, fin_fraction);
    } else {
      result = finetune(cfg, data, nullptr, fin_fraction);
    }
    save_checkpoint(result.checkpoint, fin_out);
    if (!fin_log.empty()) {
      result.log.write_csv(fin_log);
      write_metric_csv(fin_log + ".miou.csv", result.val_miou, "val_miou");
    }
    std::cout << "finetuned " << result.log.rows().size() << " steps -> " << fin_out << "\n";
  } else if (ev->parsed()) {
    Checkpoint ckpt = load_checkpoint(ev_ckpt);
    Dataset data = Dataset::load(manifest_of(ev_data));
    EvalMetrics metrics = evaluate_checkpoint(ckpt, data, ev_split);
    std::ofstream out(ev_json);
    if (!out) throw IoError("eval: cannot write " + ev_json);
    out << metrics_to_json(metrics) << "\n";
    std::cout << "miou " << metrics.miou << " abs_rel " << metrics.abs_rel << "\n";
  } else if (ren->parsed()) {
    Checkpoint ckpt = load_checkpoint(ren_ckpt);
    Dataset data = Dataset::load(manifest_of(ren_data));
    render_to_dir(ckpt, data, ren_frame, ren_out);
    std::cout << "rendered " << ren_frame << " -> " << ren_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
