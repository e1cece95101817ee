// Train the detectors on the bundled corpus, then score a fresh draw of one
// manifest profile window by window.
//
//   score_session [profile-name]     (default: family-a)

#include <cstdio>
#include <filesystem>
#include <string>

#include "encguard/pipeline.hpp"

using namespace encguard;

int main(int argc, char** argv) {
  const std::string want = argc > 1 ? argv[1] : "family-a";
  const std::filesystem::path data = ENCGUARD_DATA_DIR;
  const auto keys = load_symbol_keys(read_text_file(data / "ftrace_keys.json"));
  const auto manifest = load_manifest((data / "manifest.yaml").string());

  const PipelineConfig cfg;
  const auto trained = train_on_corpus(manifest, keys, cfg);
  std::printf("held-out macro-F1 %.4f, ROC-AUC %.4f\n", trained.heldout.macro_f1, trained.heldout.roc_auc);

  const WorkloadProfile* profile = nullptr;
  for (const auto& p : manifest.profiles) {
    if (p.name == want) profile = &p;
  }
  if (!profile) {
    std::fprintf(stderr, "no profile named %s\n", want.c_str());
    return 2;
  }
  const auto session = corpus({*profile}, 1, cfg.seed, 5000).front();
  const Schema full = raw_schema(keys);
  const auto f = featurize_session(session, keys, full);
  const Scorer scorer(trained.bundle, full);
  const auto ctx = context_of(session.meta);

  std::printf("%-6s %-10s %8s %8s %8s  %s\n", "window", "label", "p_rule2", "p_rule", "p_model", "two-layer");
  for (std::size_t k = 0; k < f.windows.size(); ++k) {
    const auto s = scorer.score(f.raw[k]);
    const auto v = two_layer(decide(s.p_rule, ctx, cfg.policy, Source::Rule), decide(s.p_model, ctx, cfg.policy));
    const auto& w = f.windows[k];
    std::printf("%-6zu %-10s %8.3f %8.3f %8.3f  %s\n", w.index,
                w.label ? std::string(to_string(*w.label)).c_str() : "-", s.p_rule2, s.p_rule, s.p_model,
                std::string(to_string(v.decision)).c_str());
  }
}
