// Copyright 2026 The SpineSeg Authors. All Rights Reserved.
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

#include <CLI11.hpp>

#include <sstream>
#include <string>

#include "spineseg/spineseg.hpp"

namespace {

using namespace spineseg;

Extents3 parse_dims(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stoul(item));
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() != 3) throw ArgumentError("--dims expects N or H,W,D");
  return {v[0], v[1], v[2]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SpineSeg: 3D spine segmentation with multi-scale fusion and adaptive window attention"};
  app.require_subcommand(1);

  app::GlobalOptions g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Root seed (overrides the config)");
  app.add_option("--config", g.config, "Config file (key = value)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Workers for window attention and fusion branches")->check(CLI::PositiveNumber);

  app::SynthOptions synth;
  std::string dims;
  auto* synth_cmd = app.add_subcommand("synth", "Write synthetic phantoms as SSV1 pairs plus a manifest");
  synth_cmd->add_option("-n,--count", synth.n, "Number of samples");
  synth_cmd->add_option("--dims", dims, "Grid extents: N or H,W,D (default: data.dims)");
  synth_cmd->add_option("--split", synth.split, "Split stream (0 train, 1 test)");

  app::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes train.log and SSCK checkpoints");
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");

  app::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--data", eval.data, "Dataset directory with manifest.tsv")->required();
  eval_cmd->add_flag("--exclude-background", eval.exclude_background, "Leave class 0 out of the means");

  auto* ablation_cmd = app.add_subcommand("ablation", "Train and compare the four architecture variants");

  app::GradcheckCmdOptions gc;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full model gradient");
  gradcheck_cmd->add_option("--fault", gc.fault, "Scale one gradient (test hook)")->group("");

  app::InferOptions infer;
  auto* infer_cmd = app.add_subcommand("infer", "Predict labels for one volume");
  infer_cmd->add_option("--checkpoint", infer.checkpoint)->required();
  infer_cmd->add_option("--volume", infer.volume, "SSV1 intensity volume")->required();
  infer_cmd->add_option("--labels", infer.labels, "SSV1 truth labels for the exported slices");
  infer_cmd->add_flag("--export-slices", infer.export_slices, "Write mid-volume input/truth/prediction images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : app::kExitUsage;
  }
  if (*seed_opt) g.seed = seed;

  if (*synth_cmd) {
    if (!dims.empty()) {
      try {
        synth.dims = parse_dims(dims);
      } catch (const std::exception& e) {
        std::cerr << "error: --dims: " << e.what() << '\n';
        return app::kExitUsage;
      }
    }
    return app::cmd_synth(g, synth);
  }
  if (*train_cmd) return app::cmd_train(g, train);
  if (*eval_cmd) return app::cmd_eval(g, eval);
  if (*ablation_cmd) return app::cmd_ablation(g);
  if (*gradcheck_cmd) return app::cmd_gradcheck(g, gc);
  if (*infer_cmd) return app::cmd_infer(g, infer);
  return app::kExitUsage;
}
