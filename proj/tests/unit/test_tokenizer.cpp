// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pic/error.hpp"
#include "pic/tokenizer.hpp"
#include "test_support.hpp"

namespace pic {
namespace {

TEST(Vocabulary, SpecialIdsAreDistinctAndOutsideBytes) {
  const std::set<TokenId> specials{Vocabulary::kAE, Vocabulary::kBOS, Vocabulary::kEOS,
                                   Vocabulary::kPAD};
  EXPECT_EQ(specials.size(), 4u);
  for (const TokenId id : specials) {
    EXPECT_FALSE(Vocabulary::is_byte(id));
    EXPECT_TRUE(Vocabulary::is_special(id));
  }
}

TEST(Vocabulary, MemoryIdsFollowTextIds) {
  const Vocabulary v(4);
  EXPECT_EQ(v.size(), Vocabulary::kTextSize + 4);
  for (std::size_t slot = 0; slot < 4; ++slot) {
    const TokenId id = v.memory_id(slot);
    EXPECT_TRUE(v.is_memory(id));
    EXPECT_FALSE(Vocabulary::is_special(id));
    EXPECT_EQ(v.memory_slot(id), slot);
  }
  EXPECT_THROW(v.memory_id(4), IndexError);
  EXPECT_THROW(v.memory_slot(Vocabulary::kBOS), IndexError);
}

TEST(Encode, BytesMapToThemselves) {
  EXPECT_EQ(encode("ab"), (std::vector<TokenId>{97, 98}));
  EXPECT_TRUE(encode("").empty());
  EXPECT_EQ(encode("\xff")[0], 255u);
}

TEST(Encode, RoundTripsRandomBytes) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s(rng.below(64), '\0');
    for (char& c : s) c = static_cast<char>(rng.below(256));
    EXPECT_EQ(decode(encode(s)), s);
  }
}

TEST(Decode, RejectsSpecialIds) {
  const std::vector<TokenId> ids{97, Vocabulary::kEOS};
  EXPECT_THROW(decode(ids), ContractError);
}

TEST(Corpus, SameSpecGivesSameCorpus) {
  for (const CorpusKind kind : {CorpusKind::kTemplate, CorpusKind::kMarkov}) {
    CorpusSpec spec;
    spec.kind = kind;
    spec.seed = 77;
    spec.count = 20;
    EXPECT_EQ(generate_corpus(spec), generate_corpus(spec)) << to_string(kind);
    CorpusSpec other = spec;
    other.seed = 78;
    EXPECT_NE(generate_corpus(spec), generate_corpus(other)) << to_string(kind);
  }
}

TEST(Corpus, ShapeMatchesSpec) {
  CorpusSpec spec;
  spec.count = 200;
  spec.length = 128;
  const auto corpus = generate_corpus(spec);
  ASSERT_EQ(corpus.size(), 200u);
  for (const auto& seq : corpus) EXPECT_EQ(seq.size(), 128u);
}

TEST(Corpus, ContainsOnlyBytes) {
  for (const CorpusKind kind : {CorpusKind::kTemplate, CorpusKind::kMarkov}) {
    CorpusSpec spec;
    spec.kind = kind;
    spec.count = 50;
    for (const auto& seq : generate_corpus(spec)) {
      for (const TokenId id : seq) ASSERT_TRUE(Vocabulary::is_byte(id));
    }
  }
}

TEST(Corpus, TemplateSamplesDiffer) {
  CorpusSpec spec;
  spec.count = 50;
  const auto corpus = generate_corpus(spec);
  const std::set<std::vector<TokenId>> unique(corpus.begin(), corpus.end());
  EXPECT_EQ(unique.size(), corpus.size());
}

// Upper quantile of chi-square with `df` degrees of freedom (Wilson-Hilferty).
double chi_square_quantile(double df, double z) {
  const double a = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

TEST(Corpus, MarkovBigramsMatchTransitionTable) {
  CorpusSpec spec;
  spec.kind = CorpusKind::kMarkov;
  spec.seed = 5;
  spec.markov_alphabet = 8;
  spec.length = 1000;
  spec.count = 100;
  const auto table = markov_transition_table(spec);
  const std::size_t k = table.size();
  for (const auto& row : table) {
    double total = 0;
    for (const double p : row) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  std::vector<std::vector<double>> counts(k, std::vector<double>(k));
  for (const auto& seq : generate_corpus(spec)) {
    for (std::size_t i = 1; i < seq.size(); ++i) counts[seq[i - 1] - 'a'][seq[i] - 'a'] += 1;
  }
  // Pearson statistic per source state; cells with small expectation are pooled.
  double stat = 0, df = 0;
  for (std::size_t s = 0; s < k; ++s) {
    double n = 0;
    for (const double c : counts[s]) n += c;
    double pooled_obs = 0, pooled_exp = 0;
    std::size_t cells = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = n * table[s][j];
      if (e < 5) {
        pooled_obs += counts[s][j];
        pooled_exp += e;
        continue;
      }
      stat += (counts[s][j] - e) * (counts[s][j] - e) / e;
      ++cells;
    }
    if (pooled_exp > 0) {
      stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
      ++cells;
    }
    df += static_cast<double>(cells) - 1;
  }
  EXPECT_LT(stat, chi_square_quantile(df, 3.09)) << "df " << df;
}

TEST(Corpus, MarkovAlphabetBounds) {
  CorpusSpec spec;
  spec.kind = CorpusKind::kMarkov;
  spec.markov_alphabet = 1;
  EXPECT_THROW(generate_corpus(spec), ContractError);
  spec.markov_alphabet = 27;
  EXPECT_THROW(generate_corpus(spec), ContractError);
}

TEST(Corpus, FileModeCropsConsecutiveWindows) {
  const auto dir = test::scratch_dir("file-corpus");
  const auto path = dir / "text.txt";
  std::ofstream(path) << "abcdefghij";
  CorpusSpec spec;
  spec.kind = CorpusKind::kFile;
  spec.path = path;
  spec.length = 3;
  spec.count = 3;
  const auto corpus = generate_corpus(spec);
  ASSERT_EQ(corpus.size(), 3u);
  EXPECT_EQ(decode(corpus[0]), "abc");
  EXPECT_EQ(decode(corpus[2]), "ghi");
  spec.count = 4;
  EXPECT_THROW(generate_corpus(spec), ContractError);
  spec.path = dir / "missing.txt";
  EXPECT_THROW(generate_corpus(spec), ContractError);
}

TEST(CorpusKind, NamesRoundTrip) {
  for (const CorpusKind kind : {CorpusKind::kTemplate, CorpusKind::kMarkov, CorpusKind::kFile}) {
    EXPECT_EQ(corpus_kind_from_string(to_string(kind)), kind);
  }
  EXPECT_THROW(corpus_kind_from_string("wiki"), ContractError);
}

TEST(Batch, StacksSequencesInOrder) {
  std::vector<std::vector<TokenId>> seqs;
  for (TokenId s = 0; s < 4; ++s) seqs.push_back(std::vector<TokenId>(8, s));
  const TrainingBatch batch = make_batch(seqs, 4);
  EXPECT_EQ(batch.batch, 4u);
  EXPECT_EQ(batch.length, 8u);
  EXPECT_EQ(batch.ids.size(), 32u);
  for (std::size_t b = 0; b < 4; ++b) {
    for (const TokenId id : batch.row(b)) EXPECT_EQ(id, b);
  }
}

TEST(Batch, RejectsOversizedAndRaggedInput) {
  std::vector<std::vector<TokenId>> seqs(3, std::vector<TokenId>(8, 1));
  EXPECT_THROW(make_batch(seqs, 4), ContractError);
  EXPECT_THROW(make_batch(seqs, 0), ContractError);
  seqs[1].pop_back();
  EXPECT_THROW(make_batch(seqs, 3), ContractError);
}

TEST(CorpusCache, RoundTrips) {
  CorpusSpec spec;
  spec.count = 5;
  spec.length = 32;
  const auto corpus = generate_corpus(spec);
  std::stringstream ss;
  write_corpus_cache(corpus, ss);
  EXPECT_EQ(read_corpus_cache(ss), corpus);
}

TEST(CorpusCache, RejectsGarbage) {
  std::stringstream ss("1 2 x\n");
  EXPECT_THROW(read_corpus_cache(ss), FormatError);
}

}  // namespace
}  // namespace pic
