// Copyright 2026 The pvnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// pvnet command line: synth, train, map, eval, gradcheck.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pvnet/pvnet.hpp"

namespace fs = std::filesystem;

namespace {

// Progress goes to stderr, results to stdout.
std::ostream& log() { return std::cerr; }

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

fs::path sidecar(const fs::path& ckpt) { return ckpt.string() + ".cfg"; }

pvnet::PipelineConfig config_for(const std::string& config, const fs::path& ckpt) {
  if (!config.empty()) return pvnet::load_config(config);
  pvnet::detail::require(fs::is_regular_file(sidecar(ckpt)), "no --config given and no ", sidecar(ckpt).string(),
                         " next to the checkpoint");
  return pvnet::load_config(sidecar(ckpt));
}

struct LoadedModel {
  pvnet::PipelineConfig cfg;
  std::unique_ptr<pvnet::Network> net;
  pvnet::Head head = pvnet::Head::kFused;
};

LoadedModel load_model(const std::string& config, const fs::path& ckpt) {
  LoadedModel m;
  m.cfg = config_for(config, ckpt);
  const pvnet::CheckpointRecords records = pvnet::load_checkpoint(ckpt);
  m.net = std::make_unique<pvnet::Network>(m.cfg.network, m.cfg.seed);
  m.net->load(records);
  m.head = pvnet::Network::head_for(records);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-Voxel semantic mapping: RGB-D segmentation and semantic voxel maps"};
  app.require_subcommand(1);

  pvnet::SynthConfig synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic RGB-D sequence");
  synth_cmd->add_option("--seed", synth.seed, "random seed")->required();
  synth_cmd->add_option("--frames", synth.frames, "number of frames")->required();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--width", synth.width, "image width")->capture_default_str();
  synth_cmd->add_option("--height", synth.height, "image height")->capture_default_str();
  synth_cmd->add_option("--boxes", synth.boxes, "boxes on the floor, 2..4")->capture_default_str();

  std::string stage, config, data, out, pixel_ckpt, voxel_ckpt;
  auto* train_cmd = app.add_subcommand("train", "run one training stage");
  train_cmd->add_option("--stage", stage, "pixel, voxel or joint")
      ->required()
      ->check(CLI::IsMember({"pixel", "voxel", "joint"}));
  train_cmd->add_option("--config", config, "config file")->required();
  train_cmd->add_option("--data", data, "sequence directory")->required();
  train_cmd->add_option("--out", out, "checkpoint to write")->required();
  train_cmd->add_option("--pixel-ckpt", pixel_ckpt, "pixel-stage checkpoint (joint stage)");
  train_cmd->add_option("--voxel-ckpt", voxel_ckpt, "voxel-stage checkpoint (joint stage)");

  std::string traj, ckpt;
  auto* map_cmd = app.add_subcommand("map", "build a semantic voxel map from keyframes");
  map_cmd->add_option("--data", data, "sequence directory")->required();
  map_cmd->add_option("--traj", traj, "trajectory file")->required();
  map_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  map_cmd->add_option("--out", out, "PLY to write")->required();
  map_cmd->add_option("--config", config, "config file (default: <ckpt>.cfg)");

  std::string ply;
  auto* eval_cmd = app.add_subcommand("eval", "segmentation metrics on the held-out frames");
  eval_cmd->add_option("--data", data, "sequence directory")->required();
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval_cmd->add_option("--config", config, "config file (default: <ckpt>.cfg)");
  eval_cmd->add_option("--out", out, "key=value metrics file (default: <ckpt>.metrics)");
  eval_cmd->add_option("--map", ply, "also score this PLY map against the voxelized ground truth");
  eval_cmd->add_option("--traj", traj, "trajectory for the ground-truth map (default: <data>/groundtruth.txt)");

  double eps = 1e-5;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full training loss");
  grad_cmd->add_option("--config", config, "config file")->required();
  grad_cmd->add_option("--eps", eps, "central-difference step")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "pvnet: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*synth_cmd) {
      const pvnet::SynthScene scene = pvnet::write_synthetic_sequence(synth, synth_out);
      std::cout << "wrote " << synth.frames << " frames, " << scene.classes() << " classes to " << synth_out << '\n';
    } else if (*train_cmd) {
      const pvnet::PipelineConfig cfg = pvnet::load_config(config);
      const pvnet::Dataset ds = pvnet::load_dataset(data);
      pvnet::StageReport r;
      if (stage == "pixel") {
        r = pvnet::train_pixel_stage(cfg, ds, out, log());
      } else if (stage == "voxel") {
        r = pvnet::train_voxel_stage(cfg, ds, out, log());
      } else {
        r = pvnet::train_joint_stage(cfg, ds, pixel_ckpt, voxel_ckpt, out, log());
      }
      pvnet::save_config(sidecar(out), cfg);
      std::cout << stage << " stage: " << r.losses.size() << " steps, final loss " << r.losses.back() << ", "
                << r.seconds << " s, wrote " << out << '\n';
    } else if (*map_cmd) {
      const LoadedModel m = load_model(config, ckpt);
      const pvnet::Dataset ds = pvnet::load_dataset(data);
      const std::vector<pvnet::Pose> poses = pvnet::load_trajectory(traj);
      pvnet::VoxelMap map(m.cfg.classes(), m.cfg.voxel_edge);
      const pvnet::MappingReport r = pvnet::run_mapping(m.cfg, ds, poses, *m.net, m.head, map, log());
      pvnet::detail::require(r.integrated > 0, "no keyframe could be integrated");
      pvnet::export_ply(map, m.cfg.palette, out);
      std::cout << "integrated " << r.integrated << "/" << r.keyframes << " keyframes (" << r.missing_pose
                << " without pose, " << r.unreadable << " unreadable), " << map.size() << " voxels, "
                << r.frames_per_second() << " frames/s, wrote " << out << '\n';
    } else if (*eval_cmd) {
      const LoadedModel m = load_model(config, ckpt);
      const pvnet::Dataset ds = pvnet::load_dataset(data);
      pvnet::EvalReport r = pvnet::evaluate(m.cfg, ds, *m.net, m.head);
      if (!ply.empty()) {
        std::ostringstream quiet;
        const auto poses = pvnet::load_trajectory(traj.empty() ? fs::path(data) / "groundtruth.txt" : fs::path(traj));
        r.voxel = pvnet::ply_voxel_accuracy(pvnet::parse_ply(ply), pvnet::ground_truth_map(m.cfg, ds, poses, quiet));
      }
      const fs::path metrics = out.empty() ? fs::path(ckpt + ".metrics") : fs::path(out);
      pvnet::write_metrics(metrics, r);
      std::cout << pvnet::metrics_line(r) << '\n';
    } else if (*grad_cmd) {
      const pvnet::PipelineConfig cfg = pvnet::load_config(config);
      const auto start = std::chrono::steady_clock::now();
      const pvnet::GradcheckReport r = pvnet::joint_loss_gradcheck(cfg, eps);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "max relative error " << r.max_relative_error << " at " << r.parameter << "[" << r.worst_index
                << "] (analytic " << r.analytic << ", numeric " << r.numeric << "), " << s << " s\n";
      pvnet::detail::require(r.max_relative_error < 1e-3, "gradient check failed: relative error ",
                             r.max_relative_error, " >= 1e-3");
    }
  } catch (const std::exception& e) {
    std::cerr << "pvnet: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
