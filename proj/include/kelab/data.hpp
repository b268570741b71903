#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "kelab/error.hpp"

namespace kelab {

// ---- vocabulary -----------------------------------------------------------

// Whitespace word-level vocabulary with reserved ids. Built over a corpus by
// frequency (ties broken lexicographically) and capped to max_size.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kUnk = 2;

    static Vocab build(const std::vector<std::string>& documents, int max_size);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id(const std::string& token) const;  // kUnk for unknown words
    bool contains(const std::string& token) const;
    const std::string& token(int id) const;

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    void save(const std::string& path) const;  // one token per line, line = id
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

std::vector<std::string> split_words(const std::string& text);

// Closed-class words shared between domains; excluded from the
// content-word overlap audit.
const std::set<std::string>& function_words();

// ---- synthetic corpora ------------------------------------------------------

struct SyntheticCorpusSpec {
    uint64_t seed = 1;
    int n_documents = 36000;
    enum class Domain { Base, Shifted };
    Domain domain = Domain::Base;
    int grammar_id = 0;
    int entity_pool = 1000;
};

// Deterministic templated factual documents, one string per document. The
// shifted domain uses a disjoint entity and relation vocabulary.
std::vector<std::string> gen_pretrain_corpus(const SyntheticCorpusSpec& spec);

// Value pools of the base world; fictional items bind new entities to these
// known values so their probes stay in-vocabulary.
struct WorldPools {
    std::vector<std::string> cities;
    std::vector<std::string> professions;
    std::vector<std::string> orgs;
    std::vector<std::string> languages;
    std::vector<std::string> awards;
    std::vector<std::string> years;
};
WorldPools base_world_pools(const SyntheticCorpusSpec& base_spec);

// ---- fictional knowledge ---------------------------------------------------

enum class Tier { Memorization, Semantic, Compositional };
const char* tier_name(Tier t);
Tier tier_from_name(const std::string& name);

enum class Setting { Paraphrase, Once };
const char* setting_name(Setting s);
Setting setting_from_name(const std::string& name);

struct FictionalProbe {
    std::string context;
    std::string target;
    Tier tier = Tier::Memorization;
};

struct FictionalItem {
    int id = 0;
    Setting setting = Setting::Paraphrase;
    std::string entity;
    std::string paragraph;
    std::vector<std::string> paraphrases;  // exactly 10
    std::vector<FictionalProbe> probes;    // exactly 15, 5 per tier
};

struct ProbeCorpus {
    std::vector<FictionalItem> items;
    int n_paraphrase = 0;
    int n_once = 0;

    void validate() const;
    void save(const std::string& path) const;
    static ProbeCorpus load(const std::string& path);
};

ProbeCorpus gen_fictional_knowledge(uint64_t seed, int n_para_items, int n_once_items,
                                    const WorldPools& pools);

// All word types used by the corpus that are not function words.
std::set<std::string> content_word_types(const std::vector<std::string>& documents);

// Every entity name must be absent from the pretraining corpus.
void check_entities_disjoint(const ProbeCorpus& corpus,
                             const std::vector<std::string>& pretrain_documents);

// ---- retention suite --------------------------------------------------------

struct RetentionItem {
    std::string task;
    std::string context;
    std::vector<std::string> candidates;
    int correct = 0;
};

struct RetentionSuite {
    std::vector<RetentionItem> items;
    std::vector<std::string> tasks;

    void save(const std::string& path) const;
    static RetentionSuite load(const std::string& path);
};

// Multiple-choice cloze items over facts from the base corpus; n_tasks
// different relation types, items_per_task items each.
RetentionSuite gen_retention_suite(const SyntheticCorpusSpec& base_spec, uint64_t seed,
                                   int n_tasks, int items_per_task);

// ---- packing ----------------------------------------------------------------

struct PackedCorpus {
    std::vector<std::vector<int>> rows;  // each exactly seq_len ids
    int64_t seq_len = 0;
    int64_t n_docs = 0;
    int64_t doc_tokens = 0;  // token count before separators/padding
    int64_t n_pad = 0;       // trailing pads in the final row
};

// Concatenates documents with BOS separators into fixed-length rows; the
// final partial row is padded with PAD.
PackedCorpus tokenize_and_pack(const std::vector<std::string>& documents, const Vocab& vocab,
                               int64_t seq_len);

// Next-token targets for one packed row. Position j predicts row[j+1];
// masked where the position or its target is padding, where the target is a
// BOS separator, or at the row end.
void row_targets(const std::vector<int>& row, std::vector<int>& targets,
                 std::vector<uint8_t>& mask);

int64_t count_valid_tokens(const std::vector<int>& row);  // leading non-pad run

// ---- corpus file io ---------------------------------------------------------

void save_corpus(const std::string& path, const std::vector<std::string>& documents);
std::vector<std::string> load_corpus(const std::string& path);

}  // namespace kelab
