// Synthetic hierarchy -> chain -> Matryoshka embeddings -> DMS evaluation of
// every prefix width. Runs in memory, nothing written to disk.

#include <cstdio>

#include "rdistill/distillation.hpp"
#include "rdistill/evaluation.hpp"
#include "rdistill/inference.hpp"
#include "rdistill/synthetic.hpp"

using namespace rdistill;

int main() {
  try {
    FamilySpec spec;  // 8 -> 16 -> 32, 200 sequences
    const Family fam = gen_family(spec);

    const ChainMap chain = train_chain(fam.levels);
    std::printf("chain %s\n", chain_hash(chain).c_str());
    for (const auto& s : chain.stages)
      std::printf("  %s -> %s: k %ld -> %ld, r_j %ld, train mse %.4g\n", s.small_tag.c_str(), s.large_tag.c_str(),
                  static_cast<long>(s.k_r), static_cast<long>(s.k_p), static_cast<long>(s.r_j), s.train_mse);

    DmsSpec dspec;
    const DmsBundle dms = gen_dms(fam.truth, dspec);
    const auto embs = infer_sets(chain, dms.levels);

    for (auto k : chain.level_dims()) {
      const std::string tag = k == chain.level_dims().front() ? fam.levels[0].model_tag() : "rd@" + std::to_string(k);
      const EvalReport rep = eval_dms(dms.dataset, prefix_set(embs, k, tag), {});
      for (const auto& b : rep.buckets)
        std::printf("%-8s %zu-mut  n_test %3zu  rho %s\n", tag.c_str(), b.mutations, b.n_test,
                    b.spearman ? std::to_string(*b.spearman).c_str() : b.note.c_str());
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
