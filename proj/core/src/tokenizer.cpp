// SPDX-License-Identifier: Apache-2.0
#include "pic/tokenizer.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <random>
#include <sstream>

#include "pic/error.hpp"

namespace pic {

TokenId Vocabulary::memory_id(std::size_t slot) const {
  if (slot >= memory_slots_) {
    throw IndexError("memory slot " + std::to_string(slot) +
                     " exceeds capacity " + std::to_string(memory_slots_));
  }
  return kTextSize + slot;
}

std::size_t Vocabulary::memory_slot(TokenId id) const {
  if (!is_memory(id)) {
    throw IndexError("token id " + std::to_string(id) + " is not a memory id");
  }
  return id - kTextSize;
}

std::vector<TokenId> encode(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

std::string decode(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (!Vocabulary::is_byte(id)) {
      throw ContractError("decode: id " + std::to_string(id) + " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

std::string to_string(CorpusKind kind) {
  switch (kind) {
    case CorpusKind::kTemplate: return "template";
    case CorpusKind::kMarkov: return "markov";
    case CorpusKind::kFile: return "file";
  }
  return "unknown";
}

CorpusKind corpus_kind_from_string(std::string_view name) {
  if (name == "template") return CorpusKind::kTemplate;
  if (name == "markov") return CorpusKind::kMarkov;
  if (name == "file") return CorpusKind::kFile;
  throw ContractError("unknown corpus kind '" + std::string(name) + "'");
}

namespace {

// Engine output is fully specified by the standard, unlike the
// distributions, so corpora are reproducible across standard libraries.
std::size_t draw(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

double draw_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

constexpr std::array<std::string_view, 8> kTemplates = {
    "user {w} logged in from {n}. ",
    "order {n} shipped to {w}. ",
    "the key for {w} is {n}. ",
    "{w} sent {n} bytes to {w}. ",
    "room {n} is booked by {w}. ",
    "{w} owes {w} {n} coins. ",
    "flight {n} departs for {w}. ",
    "note: {w} likes {w}. ",
};

std::string random_word(std::mt19937_64& rng) {
  const std::size_t len = 4 + draw(rng, 3);
  std::string w;
  for (std::size_t i = 0; i < len; ++i) {
    w.push_back(static_cast<char>('a' + draw(rng, 26)));
  }
  return w;
}

std::string random_number(std::mt19937_64& rng) {
  std::string n;
  for (std::size_t i = 0; i < 4; ++i) {
    n.push_back(static_cast<char>('0' + draw(rng, 10)));
  }
  return n;
}

std::vector<TokenId> template_sequence(std::mt19937_64& rng, std::size_t length) {
  std::string text;
  while (text.size() < length) {
    const std::string_view tpl = kTemplates[draw(rng, kTemplates.size())];
    for (std::size_t i = 0; i < tpl.size(); ++i) {
      if (tpl[i] == '{' && i + 2 < tpl.size() && tpl[i + 2] == '}') {
        text += tpl[i + 1] == 'w' ? random_word(rng) : random_number(rng);
        i += 2;
      } else {
        text.push_back(tpl[i]);
      }
    }
  }
  text.resize(length);
  return encode(text);
}

}  // namespace

std::vector<std::vector<double>> markov_transition_table(const CorpusSpec& spec) {
  const std::size_t k = spec.markov_alphabet;
  if (k < 2 || k > 26) {
    throw ContractError("markov alphabet must be in [2, 26], got " +
                        std::to_string(k));
  }
  // Separate stream from the sequence sampler so the table is a function of
  // the seed alone.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::vector<double>> table(k, std::vector<double>(k));
  for (auto& row : table) {
    double total = 0;
    for (double& p : row) {
      const double u = draw_unit(rng);
      p = u * u * u + 1e-3;
      total += p;
    }
    for (double& p : row) p /= total;
  }
  return table;
}

std::vector<std::vector<TokenId>> generate_corpus(const CorpusSpec& spec) {
  if (spec.length == 0) throw ContractError("corpus sequence length must be >= 1");
  std::vector<std::vector<TokenId>> corpus;
  corpus.reserve(spec.count);
  switch (spec.kind) {
    case CorpusKind::kTemplate: {
      std::mt19937_64 rng(spec.seed);
      for (std::size_t s = 0; s < spec.count; ++s) {
        corpus.push_back(template_sequence(rng, spec.length));
      }
      break;
    }
    case CorpusKind::kMarkov: {
      const auto table = markov_transition_table(spec);
      const std::size_t k = table.size();
      std::mt19937_64 rng(spec.seed);
      for (std::size_t s = 0; s < spec.count; ++s) {
        std::vector<TokenId> seq;
        seq.reserve(spec.length);
        std::size_t state = draw(rng, k);
        seq.push_back('a' + state);
        while (seq.size() < spec.length) {
          const double u = draw_unit(rng);
          double acc = 0;
          std::size_t next = k - 1;
          for (std::size_t j = 0; j < k; ++j) {
            acc += table[state][j];
            if (u < acc) {
              next = j;
              break;
            }
          }
          state = next;
          seq.push_back('a' + state);
        }
        corpus.push_back(std::move(seq));
      }
      break;
    }
    case CorpusKind::kFile: {
      std::ifstream in(spec.path, std::ios::binary);
      if (!in) {
        throw ContractError("cannot open corpus file '" + spec.path.string() + "'");
      }
      const std::string bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
      if (bytes.size() < spec.count * spec.length) {
        throw ContractError("corpus file '" + spec.path.string() + "' has " +
                            std::to_string(bytes.size()) + " bytes; need " +
                            std::to_string(spec.count * spec.length));
      }
      for (std::size_t s = 0; s < spec.count; ++s) {
        corpus.push_back(encode(
            std::string_view(bytes).substr(s * spec.length, spec.length)));
      }
      break;
    }
  }
  return corpus;
}

TrainingBatch make_batch(std::span<const std::vector<TokenId>> sequences,
                         std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("batch size must be >= 1");
  if (batch_size > sequences.size()) {
    throw ContractError("batch size " + std::to_string(batch_size) +
                        " exceeds the " + std::to_string(sequences.size()) +
                        " sequences available");
  }
  TrainingBatch batch;
  batch.batch = batch_size;
  batch.length = sequences[0].size();
  batch.ids.reserve(batch_size * batch.length);
  for (std::size_t b = 0; b < batch_size; ++b) {
    if (sequences[b].size() != batch.length) {
      throw ContractError("ragged batch: sequence " + std::to_string(b) +
                          " has length " + std::to_string(sequences[b].size()) +
                          ", expected " + std::to_string(batch.length));
    }
    batch.ids.insert(batch.ids.end(), sequences[b].begin(), sequences[b].end());
  }
  return batch;
}

void write_corpus_cache(std::span<const std::vector<TokenId>> corpus,
                        std::ostream& out) {
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out << ' ';
      out << seq[i];
    }
    out << '\n';
  }
}

std::vector<std::vector<TokenId>> read_corpus_cache(std::istream& in) {
  std::vector<std::vector<TokenId>> corpus;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<TokenId> seq;
    long long v = 0;
    while (ls >> v) {
      if (v < 0) throw FormatError("negative token id in corpus cache");
      seq.push_back(static_cast<TokenId>(v));
    }
    if (!ls.eof()) throw FormatError("non-numeric token in corpus cache: " + line);
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace pic
