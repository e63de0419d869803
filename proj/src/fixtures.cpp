#include "editlab/fixtures.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "editlab/error.hpp"
#include "editlab/evaluation.hpp"
#include "editlab/metrics.hpp"
#include "editlab/rng.hpp"

namespace editlab {
namespace {

constexpr std::size_t kSubjectCount = 96;

std::vector<std::string> make_names(std::size_t count, const std::string& onset_letters,
                                    const std::string& suffix) {
  static const std::string vowels = "aeiou";
  static const std::string codas = "lnrsx";
  std::vector<std::string> names;
  for (std::size_t i = 0; names.size() < count; ++i) {
    std::string name;
    name += static_cast<char>(std::toupper(onset_letters[i % onset_letters.size()]));
    name += vowels[(i / onset_letters.size()) % vowels.size()];
    name += codas[(i / (onset_letters.size() * vowels.size())) % codas.size()];
    name += suffix;
    names.push_back(name);
  }
  return names;
}

std::string join(const std::vector<std::string>& words, const std::string& last) {
  std::string out;
  for (const std::string& w : words) out += w + ' ';
  return out + last;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

std::string greedy_answer(const ToyTransformer& model, const std::string& query) {
  const TokenSeq out = greedy_decode(model, tokenize(query, model.vocab()), 1);
  return out.empty() ? std::string(kEosToken) : model.vocab().token(out.front());
}

std::vector<PreservationQuery> make_preservation(const ToyTransformer& model,
                                                 const FixtureOptions& options,
                                                 const std::set<std::size_t>& edited_subjects,
                                                 Rng& rng) {
  const auto& relations = toy_relations();
  const auto& subjects = toy_subjects();
  std::vector<std::pair<std::size_t, std::size_t>> pool;  // (subject, relation)
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    if (edited_subjects.contains(s)) continue;
    for (std::size_t r = 0; r < relations.size(); ++r) pool.emplace_back(s, r);
  }
  if (pool.size() < options.n_preserve) {
    throw Error(ErrorCode::kDatasetError, "not enough unedited subjects for preservation set");
  }
  const auto order = shuffled_indices(pool.size(), rng);
  std::vector<PreservationQuery> out;
  for (std::size_t i = 0; i < options.n_preserve; ++i) {
    const auto [s, r] = pool[order[i]];
    const Relation& rel = relations[r];
    PreservationQuery q;
    char id[16];
    std::snprintf(id, sizeof id, "p%03zu", i);
    q.id = id;
    q.query = join(rel.prompt, subjects[s]);
    if (rng.uniform() < options.consistent_fraction) {
      q.gt_answer = greedy_answer(model, q.query);
    } else {
      q.gt_answer = rel.objects[rng.below(rel.objects.size())];
    }
    out.push_back(std::move(q));
  }
  return out;
}

Dataset make_fixture(const ToyTransformer& model, const FixtureOptions& options,
                     DatasetKind kind) {
  const auto& relations = toy_relations();
  const auto& subjects = toy_subjects();
  if (options.n_edits == 0 || options.n_edits > subjects.size() / 2) {
    throw Error(ErrorCode::kDatasetError, "n_edits must be in [1, subjects/2]");
  }
  Rng rng(options.seed);
  const auto subject_order = shuffled_indices(subjects.size(), rng);
  std::set<std::size_t> edited(subject_order.begin(),
                               subject_order.begin() + static_cast<std::ptrdiff_t>(options.n_edits));
  std::vector<std::size_t> unedited(subject_order.begin() + static_cast<std::ptrdiff_t>(options.n_edits),
                                    subject_order.end());

  Dataset ds;
  ds.kind = kind;
  ds.name = kind == DatasetKind::kCounterfactual ? "toy-counterfactual" : "toy-factual";
  for (std::size_t i = 0; i < options.n_edits; ++i) {
    const std::size_t s = subject_order[i];
    const Relation& rel = relations[rng.below(relations.size())];
    EditItem item;
    char id[16];
    std::snprintf(id, sizeof id, "e%03zu", i);
    item.id = id;
    item.query = join(rel.prompt, subjects[s]);
    item.paraphrases.push_back(join(rel.paraphrase, subjects[s]));
    const std::size_t old_index = rng.below(rel.objects.size());
    std::size_t new_index = rng.below(rel.objects.size() - 1);
    if (new_index >= old_index) ++new_index;
    item.target_new = rel.objects[new_index];
    if (kind == DatasetKind::kCounterfactual) {
      item.target_old = rel.objects[old_index];
      for (std::size_t n = 0; n < options.neighbors_per_edit; ++n) {
        const std::size_t other = unedited[rng.below(unedited.size())];
        item.neighborhood_queries.push_back(join(rel.prompt, subjects[other]));
      }
    }
    ds.edit_items.push_back(std::move(item));
  }
  ds.preservation_queries = make_preservation(model, options, edited, rng);
  return ds;
}

}  // namespace

const std::vector<std::string>& toy_subjects() {
  static const std::vector<std::string> names = make_names(kSubjectCount, "bdfgkmptvz", "");
  return names;
}

const std::vector<Relation>& toy_relations() {
  static const std::vector<Relation> relations = [] {
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> templates = {
        {{"the", "employer", "of"}, {"who", "employs"}},
        {{"the", "home", "city", "of"}, {"where", "lives"}},
        {{"the", "native", "language", "of"}, {"what", "language", "speaks"}},
        {{"the", "sports", "team", "of"}, {"which", "team", "has"}},
        {{"the", "birthplace", "of"}, {"where", "was", "born"}},
        {{"the", "favorite", "food", "of"}, {"what", "food", "pleases"}},
        {{"the", "instrument", "of"}, {"which", "instrument", "suits"}},
        {{"the", "university", "of"}, {"where", "studied"}},
    };
    const std::vector<std::string> objects = make_names(48, "hjlnrsw", "ia");
    std::vector<Relation> out;
    for (std::size_t r = 0; r < templates.size(); ++r) {
      Relation rel{templates[r].first, templates[r].second, {}};
      for (std::size_t o = 0; o < 6; ++o) rel.objects.push_back(objects[r * 6 + o]);
      out.push_back(std::move(rel));
    }
    return out;
  }();
  return relations;
}

Vocab toy_vocab() {
  std::vector<std::string> tokens = {std::string(kBosToken), std::string(kUnkToken),
                                     std::string(kEosToken)};
  std::set<std::string> seen(tokens.begin(), tokens.end());
  auto add = [&](const std::string& t) {
    if (seen.insert(t).second) tokens.push_back(t);
  };
  for (const Relation& rel : toy_relations()) {
    for (const auto& w : rel.prompt) add(w);
    for (const auto& w : rel.paraphrase) add(w);
  }
  for (const char* w : {"is", "was", "and", "a", "?", "."}) add(w);
  for (const std::string& s : toy_subjects()) add(s);
  for (const Relation& rel : toy_relations()) {
    for (const auto& o : rel.objects) add(o);
  }
  return Vocab(std::move(tokens));
}

Dataset make_counterfactual_fixture(const ToyTransformer& model, const FixtureOptions& options) {
  return make_fixture(model, options, DatasetKind::kCounterfactual);
}

Dataset make_factual_fixture(const ToyTransformer& model, const FixtureOptions& options) {
  return make_fixture(model, options, DatasetKind::kFactual);
}

InconsistencyFixture make_inconsistency_fixture(const ToyTransformer& model, std::uint64_t seed,
                                                std::size_t n_queries) {
  const auto& relations = toy_relations();
  const auto& subjects = toy_subjects();
  const Vocab& vocab = model.vocab();
  Rng rng(seed);

  InconsistencyFixture fx;
  fx.dataset.name = "toy-inconsistency";
  fx.dataset.kind = DatasetKind::kFactual;
  const std::size_t n_consistent = n_queries / 3;
  std::set<std::string> used;
  std::size_t attempts = 0;
  while (fx.dataset.preservation_queries.size() < n_queries) {
    if (++attempts > 100 * n_queries) {
      throw Error(ErrorCode::kDatasetError, "could not construct inconsistency fixture");
    }
    const Relation& rel = relations[rng.below(relations.size())];
    const std::string query = join(rel.prompt, subjects[rng.below(subjects.size())]);
    if (used.contains(query)) continue;

    const TokenSeq q = tokenize(query, vocab);
    const TokenSeq decoded = greedy_decode(model, q, kJudgeDecodeTokens);
    if (decoded.empty()) continue;
    const std::string response = detokenize(decoded, vocab);
    const bool want_consistent = fx.consistent_ids.size() < n_consistent;

    std::string answer;
    if (want_consistent) {
      answer = vocab.token(decoded.front());
    } else {
      // First token: an object the model does not produce; second token: the
      // model's own top-1 continuation after it.
      std::string first;
      for (std::size_t tries = 0; tries < 16 && first.empty(); ++tries) {
        const std::string& cand = rel.objects[rng.below(rel.objects.size())];
        if (vocab.find(cand) && *vocab.find(cand) != decoded.front()) first = cand;
      }
      if (first.empty()) continue;
      TokenSeq forced = q;
      forced.push_back(*vocab.find(first));
      const TokenId second = argmax(last_token_logits(model, forced));
      if (vocab.eos() && second == *vocab.eos()) continue;
      answer = first + " " + vocab.token(second);
    }
    // Keep only records whose judge verdict matches the intended side, so
    // the split reproduces the construction exactly.
    if (containment_judge(response, answer) != want_consistent) continue;

    used.insert(query);
    PreservationQuery pq;
    char id[16];
    std::snprintf(id, sizeof id, "q%03zu", fx.dataset.preservation_queries.size());
    pq.id = id;
    pq.query = query;
    pq.gt_answer = answer;
    (want_consistent ? fx.consistent_ids : fx.inconsistent_ids).push_back(pq.id);
    fx.dataset.preservation_queries.push_back(std::move(pq));
  }
  return fx;
}

}  // namespace editlab
