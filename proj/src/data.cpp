#include "kelab/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kelab/rng.hpp"

namespace kelab {

// ---- vocabulary -----------------------------------------------------------

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

Vocab Vocab::build(const std::vector<std::string>& documents, int max_size) {
    if (max_size < 4) throw ConfigError("vocab: max_size must leave room beyond reserved ids");
    std::unordered_map<std::string, int64_t> freq;
    for (const auto& doc : documents) {
        for (const auto& w : split_words(doc)) ++freq[w];
    }
    std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab v;
    v.id_to_token_ = {"<pad>", "<bos>", "<unk>"};
    const size_t cap = static_cast<size_t>(max_size);
    for (const auto& [word, count] : ranked) {
        if (v.id_to_token_.size() >= cap) break;
        v.id_to_token_.push_back(word);
    }
    for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
        v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
    }
    return v;
}

int Vocab::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocab::contains(const std::string& token) const {
    return token_to_id_.find(token) != token_to_id_.end();
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw ValidationError("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int i : ids) {
        if (!out.empty()) out += ' ';
        out += token(i);
    }
    return out;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& t : id_to_token_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    Vocab v;
    std::string line;
    while (std::getline(in, line)) v.id_to_token_.push_back(line);
    if (v.id_to_token_.size() < 3 || v.id_to_token_[0] != "<pad>" || v.id_to_token_[1] != "<bos>" ||
        v.id_to_token_[2] != "<unk>") {
        throw ValidationError("'" + path + "': not a vocab file (reserved ids missing)");
    }
    for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
        v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
    }
    return v;
}

const std::set<std::string>& function_words() {
    static const std::set<std::string> words = {".", ":",  "the", "a",  "an", "in",  "at",
                                                "on", "was", "is",  "by", "of", "and", "to"};
    return words;
}

// ---- name and pool generation ----------------------------------------------

namespace {

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

// All combinations of the syllable groups, deterministically shuffled. The
// three domains (base, shifted, fictional) draw from disjoint first-syllable
// sets, so their name pools can never collide.
std::vector<std::string> name_pool(uint64_t seed, const std::vector<std::string>& first,
                                   const std::vector<std::string>& second,
                                   const std::vector<std::string>& third, size_t count) {
    std::vector<std::string> all;
    for (const auto& a : first) {
        for (const auto& b : second) {
            if (third.empty()) {
                all.push_back(capitalize(a + b));
            } else {
                for (const auto& c : third) all.push_back(capitalize(a + b + c));
            }
        }
    }
    Rng rng(seed);
    for (size_t i = all.size(); i > 1; --i) {
        std::swap(all[i - 1], all[rng.below(i)]);
    }
    if (count > all.size()) throw ConfigError("name pool exhausted: need " + std::to_string(count));
    all.resize(count);
    return all;
}

std::vector<std::string> year_pool(int from, int count) {
    std::vector<std::string> years;
    for (int y = from; y < from + count; ++y) years.push_back(std::to_string(y));
    return years;
}

struct BaseProfile {
    std::string born_city, live_city, profession, org, org_year, language, award, award_year, mentor;
};

struct BaseWorld {
    std::vector<std::string> entities;
    std::vector<BaseProfile> profiles;
    WorldPools pools;
};

const std::vector<std::string>& base_professions() {
    static const std::vector<std::string> v = {
        "baker",      "carpenter", "astronomer", "sculptor",  "brewer",     "cartographer",
        "falconer",   "glassblower", "locksmith", "milliner", "potter",     "weaver",
        "archivist",  "botanist",  "chandler",   "cooper",    "engraver",   "fletcher",
        "gardener",   "herbalist", "innkeeper",  "jeweler",   "mason",      "navigator",
        "oculist",    "printer",   "quarryman",  "ropemaker", "saddler",    "tanner",
        "undertaker", "vintner",   "wheelwright", "apothecary", "blacksmith", "clockmaker",
        "dyer",       "farrier",   "goldsmith",  "surveyor"};
    return v;
}

const std::vector<std::string>& base_languages() {
    static const std::vector<std::string> v = {"velsh",  "tarnic", "ombran",  "quellic", "sarren",
                                               "mistran", "dovac",  "herenese", "kalpic",  "lurian",
                                               "novett", "pershan", "rellic",  "sommor",  "tivane",
                                               "ulmari"};
    return v;
}

BaseWorld build_base_world(const SyntheticCorpusSpec& spec) {
    BaseWorld w;
    w.entities = name_pool(derive_seed(spec.seed, "base/entities"),
                           {"bal", "dor", "ven", "mar", "tel", "ris", "nor", "lim", "gar", "sel"},
                           {"an", "en", "il", "or", "us", "ett", "ara", "ion", "em", "ak", "ul",
                            "ine", "ot", "ev"},
                           {"", "el", "ar", "in", "os", "ur", "ed", "im"},
                           static_cast<size_t>(spec.entity_pool));
    w.pools.cities = name_pool(derive_seed(spec.seed, "base/cities"),
                               {"car", "lun", "pev", "ost", "hul", "ran", "ilm", "ess", "ode", "ulv"},
                               {"mere", "ford", "wick", "dale", "holm"}, {}, 50);
    w.pools.orgs = name_pool(derive_seed(spec.seed, "base/orgs"),
                             {"quor", "hest", "varn", "bles", "trem", "ald", "fir", "grel"},
                             {"ia", "eum", "ium", "ora", "anta"}, {}, 40);
    w.pools.awards = name_pool(derive_seed(spec.seed, "base/awards"),
                               {"medr", "colv", "sarn", "teph", "av", "jun"},
                               {"ast", "ium", "ine", "or"}, {}, 24);
    w.pools.professions = base_professions();
    w.pools.languages = base_languages();
    w.pools.years = year_pool(1700, 120);

    w.profiles.resize(w.entities.size());
    for (size_t i = 0; i < w.entities.size(); ++i) {
        Rng rng(derive_seed(spec.seed, "base/profile", i));
        BaseProfile& p = w.profiles[i];
        p.born_city = w.pools.cities[rng.below(w.pools.cities.size())];
        p.live_city = w.pools.cities[rng.below(w.pools.cities.size())];
        p.profession = w.pools.professions[rng.below(w.pools.professions.size())];
        p.org = w.pools.orgs[rng.below(w.pools.orgs.size())];
        p.org_year = w.pools.years[rng.below(w.pools.years.size())];
        p.language = w.pools.languages[rng.below(w.pools.languages.size())];
        p.award = w.pools.awards[rng.below(w.pools.awards.size())];
        p.award_year = w.pools.years[rng.below(w.pools.years.size())];
        size_t mentor = rng.below(w.entities.size());
        if (mentor == i) mentor = (mentor + 1) % w.entities.size();
        p.mentor = w.entities[mentor];
    }
    return w;
}

// Relation templates. Variant 0 is the canonical wording used by
// memorization probes; variants 1+ appear as paraphrases and as occasional
// rewordings inside the pretraining corpus itself.
struct Relation {
    const char* key;
    std::vector<std::string> verbs;  // "<subject> <verb> <value> [in <year>] ."
    bool has_year;
};

const std::vector<Relation>& base_relations() {
    static const std::vector<Relation> rels = {
        {"born", {"was born in", "hails from", "originates from"}, false},
        {"works", {"works as a", "serves as a", "practices as a"}, false},
        {"founded", {"founded the", "established the", "organized the"}, true},
        {"speaks", {"speaks", "converses in", "communicates in"}, false},
        {"won", {"won the", "received the", "earned the"}, true},
        {"lives", {"lives in", "resides in", "dwells in"}, false},
        {"trained", {"trained under", "apprenticed under", "studied under"}, false},
    };
    return rels;
}

struct FactValues {
    std::string value;
    std::string year;
};

FactValues base_fact(const BaseProfile& p, const std::string& key) {
    if (key == "born") return {p.born_city, ""};
    if (key == "works") return {p.profession, ""};
    if (key == "founded") return {p.org, p.org_year};
    if (key == "speaks") return {p.language, ""};
    if (key == "won") return {p.award, p.award_year};
    if (key == "lives") return {p.live_city, ""};
    if (key == "trained") return {p.mentor, ""};
    throw ValidationError("unknown relation key " + key);
}

std::string render_fact(const std::string& subject, const Relation& rel, const FactValues& fv,
                        int variant) {
    std::string s = subject + " " + rel.verbs[static_cast<size_t>(variant)] + " " + fv.value;
    if (rel.has_year) s += " in " + fv.year;
    return s + " .";
}

// Composite sentence forms; probes of the compositional tier cut right
// before the final value.
struct Composite {
    std::string text;
    std::string context;
    std::string target;
};

Composite composite_form(int which, const std::string& entity, const BaseProfile& p) {
    switch (which) {
        case 0:
            return {"The " + p.profession + " born in " + p.born_city + " is named " + entity + " .",
                    "The " + p.profession + " born in " + p.born_city + " is named", entity};
        case 1:
            return {"The " + p.profession + " who speaks " + p.language + " is named " + entity + " .",
                    "The " + p.profession + " who speaks " + p.language + " is named", entity};
        case 2:
            return {"The founder of the " + p.org + " was born in " + p.born_city + " .",
                    "The founder of the " + p.org + " was born in", p.born_city};
        case 3:
            return {"The winner of the " + p.award + " works as a " + p.profession + " .",
                    "The winner of the " + p.award + " works as a", p.profession};
        case 4:
            return {"The founder of the " + p.org + " speaks " + p.language + " .",
                    "The founder of the " + p.org + " speaks", p.language};
        default:
            throw ValidationError("composite_form: bad index");
    }
}

std::vector<std::string> gen_base_corpus(const SyntheticCorpusSpec& spec) {
    BaseWorld world = build_base_world(spec);
    const auto& rels = base_relations();
    std::vector<std::string> docs;
    docs.reserve(static_cast<size_t>(spec.n_documents));
    for (int i = 0; i < spec.n_documents; ++i) {
        Rng rng(derive_seed(spec.seed, "base/doc", static_cast<uint64_t>(i)));
        const size_t e = rng.below(world.entities.size());
        const std::string& name = world.entities[e];
        const BaseProfile& prof = world.profiles[e];

        std::vector<size_t> order(rels.size());
        for (size_t k = 0; k < order.size(); ++k) order[k] = k;
        for (size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        const size_t n_facts = 4 + rng.below(4);  // 4..7

        std::string doc = "About " + name + " .";
        for (size_t k = 0; k < n_facts; ++k) {
            const Relation& rel = rels[order[k]];
            const int variant = rng.uniform() < 0.7 ? 0 : 1 + static_cast<int>(rng.below(2));
            doc += " " + render_fact(name, rel, base_fact(prof, rel.key), variant);
        }
        if (rng.uniform() < 0.15) {
            doc += " " + composite_form(static_cast<int>(rng.below(5)), name, prof).text;
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

// Shifted domain: a compound/biomedical register with disjoint entities,
// relation verbs, and value pools. Plays the role of the distribution shift
// between the pretraining corpus and the continual-learning corpus.
struct ShiftedWorld {
    std::vector<std::string> compounds;
    std::vector<std::string> receptors, enzymes, diseases, labs, dosages, years;
};

ShiftedWorld build_shifted_world(const SyntheticCorpusSpec& spec) {
    ShiftedWorld w;
    w.compounds = name_pool(derive_seed(spec.seed, "shift/compounds"),
                            {"zyl", "phex", "quam", "xen", "dro", "plav", "stil", "crox", "yper", "vum"},
                            {"ide", "ax", "umab", "etin", "ozan", "ivir", "aset", "olol", "epam"},
                            {"", "a", "o"}, static_cast<size_t>(spec.entity_pool));
    w.receptors = name_pool(derive_seed(spec.seed, "shift/receptors"),
                            {"glu", "ser", "dopa", "hista", "kappa", "mu", "adeno", "orex"},
                            {"rin", "phan", "tor", "plex", "gen"}, {}, 40);
    w.enzymes = name_pool(derive_seed(spec.seed, "shift/enzymes"),
                          {"cyto", "lipo", "prote", "amylo", "kina", "transa", "oxida", "redu"},
                          {"zyme", "ase", "idase", "ulase", "ectase"}, {}, 40);
    w.labs = name_pool(derive_seed(spec.seed, "shift/labs"),
                       {"helix", "corda", "nuva", "beryl", "sigma", "ferro"},
                       {"gen", "med", "bio", "pharm", "lab"}, {}, 30);
    {
        static const std::vector<std::string> stems = {"velk", "dramm", "ostra", "quill", "merro",
                                                       "tannis", "bellu", "korva", "lycid"};
        static const std::vector<std::string> suffixes = {"osis", "itis", "emia", "algia"};
        for (const auto& s : stems) {
            for (const auto& suf : suffixes) w.diseases.push_back(s + suf);
        }
    }
    for (int mg = 5; mg <= 120; mg += 5) w.dosages.push_back(std::to_string(mg) + "mg");
    w.years = year_pool(2000, 80);
    return w;
}

std::vector<std::string> gen_shifted_corpus(const SyntheticCorpusSpec& spec) {
    ShiftedWorld world = build_shifted_world(spec);
    static const std::vector<Relation> rels = {
        {"binds", {"binds the receptor", "targets the receptor"}, false},
        {"inhibits", {"inhibits the enzyme", "suppresses the enzyme"}, false},
        {"treats", {"treats", "alleviates"}, false},
        {"synth", {"was synthesized at", "was formulated at"}, true},
        {"dosed", {"is dosed at", "is administered at"}, false},
        {"cleared", {"is metabolized by", "is cleared by"}, false},
    };
    std::vector<std::string> docs;
    docs.reserve(static_cast<size_t>(spec.n_documents));
    for (int i = 0; i < spec.n_documents; ++i) {
        Rng rng(derive_seed(spec.seed, "shift/doc", static_cast<uint64_t>(i)));
        const size_t c = rng.below(world.compounds.size());
        const std::string& name = world.compounds[c];
        Rng prof_rng(derive_seed(spec.seed, "shift/profile", c));
        const std::string receptor = world.receptors[prof_rng.below(world.receptors.size())];
        const std::string enzyme = world.enzymes[prof_rng.below(world.enzymes.size())];
        const std::string disease = world.diseases[prof_rng.below(world.diseases.size())];
        const std::string lab = world.labs[prof_rng.below(world.labs.size())];
        const std::string year = world.years[prof_rng.below(world.years.size())];
        const std::string dose = world.dosages[prof_rng.below(world.dosages.size())];
        const std::string enzyme2 = world.enzymes[prof_rng.below(world.enzymes.size())];

        auto value_of = [&](const std::string& key) -> FactValues {
            if (key == "binds") return {receptor, ""};
            if (key == "inhibits") return {enzyme, ""};
            if (key == "treats") return {disease, ""};
            if (key == "synth") return {lab, year};
            if (key == "dosed") return {dose, ""};
            return {enzyme2, ""};
        };

        std::vector<size_t> order(rels.size());
        for (size_t k = 0; k < order.size(); ++k) order[k] = k;
        for (size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        const size_t n_facts = 4 + rng.below(3);  // 4..6

        std::string doc = "Report : " + name + " .";
        for (size_t k = 0; k < n_facts; ++k) {
            const Relation& rel = rels[order[k]];
            const int variant = rng.uniform() < 0.7 ? 0 : 1;
            doc += " " + render_fact(name, rel, value_of(rel.key), variant);
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

}  // namespace

std::vector<std::string> gen_pretrain_corpus(const SyntheticCorpusSpec& spec) {
    if (spec.n_documents < 0) throw ConfigError("corpus spec: n_documents must be >= 0");
    if (spec.entity_pool < 1) throw ConfigError("corpus spec: entity_pool must be >= 1");
    if (spec.n_documents > 64 * spec.entity_pool) {
        throw ConfigError("corpus spec: entity pool " + std::to_string(spec.entity_pool) +
                          " too small for " + std::to_string(spec.n_documents) + " documents");
    }
    if (spec.n_documents == 0) return {};
    return spec.domain == SyntheticCorpusSpec::Domain::Base ? gen_base_corpus(spec)
                                                            : gen_shifted_corpus(spec);
}

WorldPools base_world_pools(const SyntheticCorpusSpec& base_spec) {
    return build_base_world(base_spec).pools;
}

// ---- fictional knowledge -----------------------------------------------------

const char* tier_name(Tier t) {
    switch (t) {
        case Tier::Memorization: return "memorization";
        case Tier::Semantic: return "semantic";
        default: return "compositional";
    }
}

Tier tier_from_name(const std::string& name) {
    if (name == "memorization") return Tier::Memorization;
    if (name == "semantic") return Tier::Semantic;
    if (name == "compositional") return Tier::Compositional;
    throw ConfigError("unknown tier '" + name + "'");
}

const char* setting_name(Setting s) { return s == Setting::Paraphrase ? "paraphrase" : "once"; }

Setting setting_from_name(const std::string& name) {
    if (name == "paraphrase") return Setting::Paraphrase;
    if (name == "once") return Setting::Once;
    throw ConfigError("unknown setting '" + name + "'");
}

void ProbeCorpus::validate() const {
    int para = 0, once = 0;
    for (const auto& item : items) {
        if (item.probes.size() != 15) {
            throw ValidationError("fictional item " + std::to_string(item.id) + " has " +
                                  std::to_string(item.probes.size()) + " probes, expected 15");
        }
        int by_tier[3] = {0, 0, 0};
        for (const auto& p : item.probes) {
            ++by_tier[static_cast<int>(p.tier)];
            if (p.target.empty()) throw ValidationError("fictional probe with empty target span");
        }
        if (by_tier[0] != 5 || by_tier[1] != 5 || by_tier[2] != 5) {
            throw ValidationError("fictional item " + std::to_string(item.id) +
                                  " does not hold 5 probes per tier");
        }
        if (item.setting == Setting::Paraphrase && item.paraphrases.size() != 10) {
            throw ValidationError("paraphrase item " + std::to_string(item.id) + " has " +
                                  std::to_string(item.paraphrases.size()) + " paraphrases, expected 10");
        }
        (item.setting == Setting::Paraphrase ? para : once) += 1;
    }
    if (para != n_paraphrase || once != n_once) {
        throw ValidationError("probe corpus counts disagree with item settings");
    }
}

ProbeCorpus gen_fictional_knowledge(uint64_t seed, int n_para_items, int n_once_items,
                                    const WorldPools& pools) {
    if (n_para_items < 0 || n_once_items < 0) throw ConfigError("fictional: negative item count");
    const int total = n_para_items + n_once_items;
    std::vector<std::string> names = name_pool(
        derive_seed(seed, "fict/entities"),
        {"juv", "wex", "kiz", "yol", "zan", "pyx", "qev", "vux", "jor", "xill"},
        {"ard", "eno", "ith", "una", "oss", "ery"}, {}, static_cast<size_t>(total));

    const auto& rels = base_relations();
    auto rel_by_key = [&](const std::string& key) -> const Relation& {
        for (const auto& r : rels) {
            if (key == r.key) return r;
        }
        throw ValidationError("unknown relation " + key);
    };

    ProbeCorpus corpus;
    corpus.n_paraphrase = n_para_items;
    corpus.n_once = n_once_items;
    for (int i = 0; i < total; ++i) {
        Rng rng(derive_seed(seed, "fict/item", static_cast<uint64_t>(i)));
        FictionalItem item;
        item.id = i;
        item.setting = i < n_para_items ? Setting::Paraphrase : Setting::Once;
        item.entity = names[static_cast<size_t>(i)];

        BaseProfile p;
        p.born_city = pools.cities[rng.below(pools.cities.size())];
        p.live_city = pools.cities[rng.below(pools.cities.size())];
        p.profession = pools.professions[rng.below(pools.professions.size())];
        p.org = pools.orgs[rng.below(pools.orgs.size())];
        p.org_year = pools.years[rng.below(pools.years.size())];
        p.language = pools.languages[rng.below(pools.languages.size())];
        p.award = pools.awards[rng.below(pools.awards.size())];
        p.award_year = pools.years[rng.below(pools.years.size())];

        static const std::vector<std::string> fact_keys = {"born", "works", "founded",
                                                           "speaks", "won", "lives"};
        auto render_paragraph = [&](int variant_salt, Rng& order_rng) {
            std::vector<size_t> order(fact_keys.size());
            for (size_t k = 0; k < order.size(); ++k) order[k] = k;
            if (variant_salt >= 0) {
                for (size_t k = order.size(); k > 1; --k) {
                    std::swap(order[k - 1], order[order_rng.below(k)]);
                }
            }
            std::string text = "About " + item.entity + " .";
            for (size_t k = 0; k < order.size(); ++k) {
                const std::string& key = fact_keys[order[k]];
                const Relation& rel = rel_by_key(key);
                int variant = 0;
                if (variant_salt >= 0) {
                    variant = 1 + static_cast<int>((static_cast<size_t>(variant_salt) + k) %
                                                   (rel.verbs.size() - 1));
                }
                text += " " + render_fact(item.entity, rel, base_fact(p, key), variant);
            }
            return text;
        };

        Rng dummy(0);
        item.paragraph = render_paragraph(-1, dummy);
        for (int r = 0; r < 10; ++r) {
            Rng order_rng(derive_seed(seed, "fict/para_order", static_cast<uint64_t>(i) * 100 +
                                                                   static_cast<uint64_t>(r)));
            item.paraphrases.push_back(render_paragraph(r, order_rng));
        }

        // memorization: canonical wording, target appears verbatim in the paragraph
        static const std::vector<std::string> probe_keys = {"born", "works", "founded", "speaks", "won"};
        for (const auto& key : probe_keys) {
            const Relation& rel = rel_by_key(key);
            FactValues fv = base_fact(p, key);
            item.probes.push_back({item.entity + " " + rel.verbs[0], fv.value, Tier::Memorization});
        }
        // semantic: paraphrased wording of the same facts
        for (const auto& key : probe_keys) {
            const Relation& rel = rel_by_key(key);
            FactValues fv = base_fact(p, key);
            item.probes.push_back({item.entity + " " + rel.verbs[1], fv.value, Tier::Semantic});
        }
        // compositional: integrate two facts
        for (int c = 0; c < 5; ++c) {
            Composite comp = composite_form(c, item.entity, p);
            item.probes.push_back({comp.context, comp.target, Tier::Compositional});
        }
        corpus.items.push_back(std::move(item));
    }
    corpus.validate();
    return corpus;
}

std::set<std::string> content_word_types(const std::vector<std::string>& documents) {
    std::set<std::string> types;
    for (const auto& doc : documents) {
        for (const auto& w : split_words(doc)) {
            if (!function_words().count(w)) types.insert(w);
        }
    }
    return types;
}

void check_entities_disjoint(const ProbeCorpus& corpus,
                             const std::vector<std::string>& pretrain_documents) {
    std::set<std::string> words;
    for (const auto& doc : pretrain_documents) {
        for (const auto& w : split_words(doc)) words.insert(w);
    }
    for (const auto& item : corpus.items) {
        if (words.count(item.entity)) {
            throw ValidationError("fictional entity '" + item.entity +
                                  "' occurs in the pretraining corpus");
        }
    }
}

void ProbeCorpus::save(const std::string& path) const {
    nlohmann::json j;
    j["n_paraphrase"] = n_paraphrase;
    j["n_once"] = n_once;
    j["items"] = nlohmann::json::array();
    for (const auto& item : items) {
        nlohmann::json ji;
        ji["id"] = item.id;
        ji["setting"] = setting_name(item.setting);
        ji["entity"] = item.entity;
        ji["paragraph"] = item.paragraph;
        ji["paraphrases"] = item.paraphrases;
        ji["probes"] = nlohmann::json::array();
        for (const auto& probe : item.probes) {
            ji["probes"].push_back(
                {{"context", probe.context}, {"target", probe.target}, {"tier", tier_name(probe.tier)}});
        }
        j["items"].push_back(std::move(ji));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(1) << '\n';
}

ProbeCorpus ProbeCorpus::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ValidationError("'" + path + "': not valid probe corpus JSON");
    ProbeCorpus corpus;
    corpus.n_paraphrase = j.at("n_paraphrase").get<int>();
    corpus.n_once = j.at("n_once").get<int>();
    for (const auto& ji : j.at("items")) {
        FictionalItem item;
        item.id = ji.at("id").get<int>();
        item.setting = setting_from_name(ji.at("setting").get<std::string>());
        item.entity = ji.at("entity").get<std::string>();
        item.paragraph = ji.at("paragraph").get<std::string>();
        item.paraphrases = ji.at("paraphrases").get<std::vector<std::string>>();
        for (const auto& jp : ji.at("probes")) {
            item.probes.push_back({jp.at("context").get<std::string>(),
                                   jp.at("target").get<std::string>(),
                                   tier_from_name(jp.at("tier").get<std::string>())});
        }
        corpus.items.push_back(std::move(item));
    }
    corpus.validate();
    return corpus;
}

// ---- retention suite ----------------------------------------------------------

RetentionSuite gen_retention_suite(const SyntheticCorpusSpec& base_spec, uint64_t seed, int n_tasks,
                                   int items_per_task) {
    if (n_tasks < 1 || n_tasks > 4) throw ConfigError("retention suite: n_tasks must be in [1, 4]");
    if (items_per_task < 1) throw ConfigError("retention suite: items_per_task must be >= 1");
    BaseWorld world = build_base_world(base_spec);
    if (static_cast<size_t>(items_per_task) > world.entities.size()) {
        throw ConfigError("retention suite: items_per_task exceeds entity pool");
    }

    static const std::vector<std::string> task_names = {"born_city", "profession", "founded_year",
                                                        "language"};
    RetentionSuite suite;
    for (int t = 0; t < n_tasks; ++t) {
        const std::string& task = task_names[static_cast<size_t>(t)];
        suite.tasks.push_back(task);
        Rng rng(derive_seed(seed, "retention/" + task));
        std::vector<size_t> order(world.entities.size());
        for (size_t k = 0; k < order.size(); ++k) order[k] = k;
        for (size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);

        for (int i = 0; i < items_per_task; ++i) {
            const size_t e = order[static_cast<size_t>(i)];
            const std::string& name = world.entities[e];
            const BaseProfile& p = world.profiles[e];
            RetentionItem item;
            item.task = task;
            std::string truth;
            const std::vector<std::string>* pool = nullptr;
            if (task == "born_city") {
                item.context = name + " was born in";
                truth = p.born_city;
                pool = &world.pools.cities;
            } else if (task == "profession") {
                item.context = name + " works as a";
                truth = p.profession;
                pool = &world.pools.professions;
            } else if (task == "founded_year") {
                item.context = name + " founded the " + p.org + " in";
                truth = p.org_year;
                pool = &world.pools.years;
            } else {
                item.context = name + " speaks";
                truth = p.language;
                pool = &world.pools.languages;
            }
            item.candidates.push_back(truth);
            while (item.candidates.size() < 4) {
                const std::string& alt = (*pool)[rng.below(pool->size())];
                bool dup = false;
                for (const auto& c : item.candidates) dup = dup || c == alt;
                if (!dup) item.candidates.push_back(alt);
            }
            // seeded shuffle so the correct index is not always 0
            for (size_t k = item.candidates.size(); k > 1; --k) {
                std::swap(item.candidates[k - 1], item.candidates[rng.below(k)]);
            }
            for (size_t k = 0; k < item.candidates.size(); ++k) {
                if (item.candidates[k] == truth) item.correct = static_cast<int>(k);
            }
            suite.items.push_back(std::move(item));
        }
    }
    return suite;
}

void RetentionSuite::save(const std::string& path) const {
    nlohmann::json j;
    j["tasks"] = tasks;
    j["items"] = nlohmann::json::array();
    for (const auto& item : items) {
        j["items"].push_back({{"task", item.task},
                              {"context", item.context},
                              {"candidates", item.candidates},
                              {"correct", item.correct}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(1) << '\n';
}

RetentionSuite RetentionSuite::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ValidationError("'" + path + "': not valid retention suite JSON");
    RetentionSuite suite;
    suite.tasks = j.at("tasks").get<std::vector<std::string>>();
    for (const auto& ji : j.at("items")) {
        RetentionItem item;
        item.task = ji.at("task").get<std::string>();
        item.context = ji.at("context").get<std::string>();
        item.candidates = ji.at("candidates").get<std::vector<std::string>>();
        item.correct = ji.at("correct").get<int>();
        suite.items.push_back(std::move(item));
    }
    return suite;
}

// ---- packing --------------------------------------------------------------------

PackedCorpus tokenize_and_pack(const std::vector<std::string>& documents, const Vocab& vocab,
                               int64_t seq_len) {
    if (vocab.size() <= 3) throw ValidationError("tokenize_and_pack: empty vocabulary");
    if (seq_len < 2) throw ConfigError("tokenize_and_pack: seq_len must be >= 2");
    PackedCorpus packed;
    packed.seq_len = seq_len;
    packed.n_docs = static_cast<int64_t>(documents.size());

    std::vector<int> stream;
    for (const auto& doc : documents) {
        stream.push_back(Vocab::kBos);
        std::vector<int> ids = vocab.encode(doc);
        packed.doc_tokens += static_cast<int64_t>(ids.size());
        stream.insert(stream.end(), ids.begin(), ids.end());
    }
    for (size_t start = 0; start < stream.size(); start += static_cast<size_t>(seq_len)) {
        std::vector<int> row(static_cast<size_t>(seq_len), Vocab::kPad);
        const size_t n = std::min(stream.size() - start, static_cast<size_t>(seq_len));
        std::copy_n(stream.begin() + static_cast<int64_t>(start), n, row.begin());
        packed.n_pad += seq_len - static_cast<int64_t>(n);
        packed.rows.push_back(std::move(row));
    }
    return packed;
}

void row_targets(const std::vector<int>& row, std::vector<int>& targets,
                 std::vector<uint8_t>& mask) {
    const size_t t = row.size();
    targets.assign(t, 0);
    mask.assign(t, 0);
    for (size_t j = 0; j + 1 < t; ++j) {
        targets[j] = row[j + 1];
        mask[j] = (row[j] != Vocab::kPad && row[j + 1] != Vocab::kPad && row[j + 1] != Vocab::kBos)
                      ? 1
                      : 0;
    }
}

int64_t count_valid_tokens(const std::vector<int>& row) {
    int64_t n = 0;
    while (n < static_cast<int64_t>(row.size()) && row[static_cast<size_t>(n)] != Vocab::kPad) ++n;
    return n;
}

// ---- corpus file io ------------------------------------------------------------

void save_corpus(const std::string& path, const std::vector<std::string>& documents) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& doc : documents) out << doc << '\n';
}

std::vector<std::string> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::string> docs;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) docs.push_back(line);
    }
    return docs;
}

}  // namespace kelab
