#include "visunpack/labelrefiner.hpp"

#include <algorithm>
#include <cctype>
#include <nlohmann/json.hpp>
#include <sstream>

#include "visunpack/error.hpp"

namespace visunpack::labelrefiner {

RefinerParams RefinerParams::defaults() {
  RefinerParams p;
  p.stopwords = {"win",      "win32",        "win64",     "w32",         "w64",     "msil",
                 "variant",  "heur",         "heuristic", "gen",         "generic", "malicious",
                 "malware",  "suspicious",   "unsafe",    "behaveslike", "cloud",   "static",
                 "highconfidence", "application", "packed", "packer",      "file",    "other"};
  p.synonym_groups = {{"pua", {"pua", "pup"}}};
  p.broad_classes = {"trojan",  "adware",     "worm",     "virus",   "pua",     "backdoor",
                     "ransom",  "pws",        "spyware",  "downloader", "dropper", "rootkit",
                     "riskware", "hacktool",  "exploit",  "keylogger", "miner",  "banker",
                     "stealer", "virtool",    "grayware", "bot"};
  return p;
}

void RefinerParams::validate() const {
  if (!(thr > 0.0 && thr <= 1.0)) throw Error(ErrorCode::InvalidArgument, "thr must be in (0, 1]");
  if (t < 2) throw Error(ErrorCode::InvalidArgument, "t must be >= 2");
}

std::vector<std::string> tokenize(std::string_view raw_label, const RefinerParams& params) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    const bool alphabetic = std::all_of(cur.begin(), cur.end(), [](unsigned char c) {
      return std::isalpha(c) != 0;
    });
    if (alphabetic && cur.size() >= params.min_token_len && !params.stopwords.contains(cur)) {
      out.push_back(cur);
    }
    cur.clear();
  };
  for (const char ch : raw_label) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c) != 0) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

double lcs_similarity(std::string_view a, std::string_view b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyString, "lcs_similarity needs non-empty strings");
  std::vector<std::size_t> prev(b.size() + 1, 0), row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      row[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], row[j - 1]);
    }
    std::swap(prev, row);
  }
  return static_cast<double>(prev[b.size()]) / static_cast<double>(std::min(a.size(), b.size()));
}

std::map<std::string, std::string> merge_tokens(const std::map<std::string, std::size_t>& frequencies,
                                                const RefinerParams& params) {
  std::vector<std::pair<std::string, std::size_t>> order(frequencies.begin(), frequencies.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first.size() != b.first.size()) return a.first.size() < b.first.size();
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::map<std::string, std::string> mapping;
  std::vector<std::string> roots;
  for (const auto& [token, freq] : order) {
    std::string target = token;
    for (const auto& root : roots) {
      if (lcs_similarity(token, root) >= params.thr) {
        target = root;
        break;
      }
    }
    if (target == token) roots.push_back(token);
    mapping[token] = target;
  }

  auto group_of = [&](const std::string& tok) -> const SynonymGroup* {
    for (const auto& g : params.synonym_groups) {
      if (g.members.contains(tok) || g.canonical == tok) return &g;
    }
    return nullptr;
  };
  for (auto& [token, target] : mapping) {
    if (const auto* g = group_of(token)) {
      target = g->canonical;
    } else if (const auto* g2 = group_of(target)) {
      target = g2->canonical;
    }
  }
  // A group's canonical may itself have merged elsewhere; settle on fixed points.
  for (auto& [token, target] : mapping) {
    for (int hop = 0; hop < 8; ++hop) {
      const auto it = mapping.find(target);
      if (it == mapping.end() || it->second == target) break;
      target = it->second;
    }
  }
  return mapping;
}

namespace {

using TokenCounts = std::map<std::string, std::size_t>;

/// Canonical token -> vendors mentioning it, for one record.
std::map<std::string, std::set<std::string>> vendor_support(
    const LabelRecord& record, const std::map<std::string, std::string>& canon,
    const RefinerParams& params) {
  std::map<std::string, std::set<std::string>> support;
  for (const auto& [vendor, label] : record.vendor_labels) {
    for (const auto& tok : tokenize(label, params)) {
      const auto it = canon.find(tok);
      support[it == canon.end() ? tok : it->second].insert(vendor);
    }
  }
  return support;
}

struct Pool {
  std::map<std::string, std::string> canon;
  /// Samples whose labels contain the canonical token.
  TokenCounts sample_frequency;
};

Pool build_pool(const std::vector<LabelRecord>& records, const RefinerParams& params) {
  TokenCounts raw;
  for (const auto& r : records) {
    for (const auto& [vendor, label] : r.vendor_labels) {
      for (const auto& tok : tokenize(label, params)) ++raw[tok];
    }
  }
  Pool pool;
  pool.canon = merge_tokens(raw, params);
  for (const auto& r : records) {
    for (const auto& [tok, vendors] : vendor_support(r, pool.canon, params)) {
      ++pool.sample_frequency[tok];
    }
  }
  return pool;
}

RefinedLabel refine_in_pool(const LabelRecord& record, const Pool& pool, const RefinerParams& params) {
  const auto support = vendor_support(record, pool.canon, params);
  if (support.empty()) {
    throw Error(ErrorCode::NoUsableTokens, "sample " + record.sample_id + ": every vendor label filtered away");
  }

  std::vector<std::string> ranked;
  for (const auto& [tok, vendors] : support) ranked.push_back(tok);
  auto df = [&](const std::string& tok) {
    const auto it = pool.sample_frequency.find(tok);
    return it == pool.sample_frequency.end() ? std::size_t{0} : it->second;
  };
  std::sort(ranked.begin(), ranked.end(), [&](const std::string& a, const std::string& b) {
    const auto ca = support.at(a).size();
    const auto cb = support.at(b).size();
    if (ca != cb) return ca > cb;
    if (df(a) != df(b)) return df(a) > df(b);
    return a < b;
  });

  const std::vector<std::string> top(ranked.begin(),
                                     ranked.begin() + static_cast<std::ptrdiff_t>(std::min(params.t, ranked.size())));
  auto is_broad = [&](const std::string& tok) { return params.broad_classes.contains(tok); };

  RefinedLabel out;
  out.sample_id = record.sample_id;
  out.multi_class = std::count_if(top.begin(), top.end(), is_broad) > 1;

  // Class: best broad token in the top t, else anywhere in the sample, else the top token.
  auto cls = std::find_if(top.begin(), top.end(), is_broad);
  if (cls != top.end()) {
    out.class_token = *cls;
  } else if (auto any = std::find_if(ranked.begin(), ranked.end(), is_broad); any != ranked.end()) {
    out.class_token = *any;
  } else {
    out.class_token = top.front();
  }

  // Family: best non-broad token in the top t; else the runner-up; else the class itself.
  auto fam = std::find_if(top.begin(), top.end(), [&](const std::string& tok) {
    return !is_broad(tok) && tok != out.class_token;
  });
  if (fam != top.end()) {
    out.family_token = *fam;
  } else if (auto other = std::find_if(top.begin(), top.end(),
                                       [&](const std::string& tok) { return tok != out.class_token; });
             other != top.end()) {
    out.family_token = *other;
  } else {
    out.family_token = out.class_token;
  }
  out.low_specificity = out.family_token == out.class_token;

  std::set<std::string> vendors = support.at(out.class_token);
  if (const auto it = support.find(out.family_token); it != support.end()) {
    vendors.insert(it->second.begin(), it->second.end());
  }
  out.confidence = vendors.size();
  return out;
}

}  // namespace

RefinedLabel refine_one(const LabelRecord& record, const std::vector<LabelRecord>& records,
                        const RefinerParams& params) {
  params.validate();
  return refine_in_pool(record, build_pool(records, params), params);
}

RefineResult refine(const std::vector<LabelRecord>& records, const RefinerParams& params) {
  params.validate();
  if (records.empty()) throw Error(ErrorCode::InvalidArgument, "refine needs at least one record");
  const Pool pool = build_pool(records, params);

  RefineResult result;
  for (const auto& r : records) {
    try {
      result.labels.push_back(refine_in_pool(r, pool, params));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoUsableTokens) throw;
      result.manual_review.push_back(r.sample_id);
    }
  }

  // Consolidate the emitted tokens with the same merge rule.
  TokenCounts emitted;
  for (const auto& l : result.labels) {
    ++emitted[l.class_token];
    ++emitted[l.family_token];
  }
  const auto final_canon = merge_tokens(emitted, params);
  for (auto& l : result.labels) {
    l.class_token = final_canon.at(l.class_token);
    l.family_token = final_canon.at(l.family_token);
    l.low_specificity = l.family_token == l.class_token;
  }
  return result;
}

double cohens_kappa(const std::vector<std::string>& labels_a, const std::vector<std::string>& labels_b) {
  if (labels_a.size() != labels_b.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(labels_a.size()) + " vs " +
                                               std::to_string(labels_b.size()) + " labels");
  }
  if (labels_a.empty()) throw Error(ErrorCode::InvalidArgument, "kappa needs at least one item");
  const auto n = static_cast<long long>(labels_a.size());
  std::map<std::string, long long> ca, cb;
  long long agree = 0;
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    ++ca[labels_a[i]];
    ++cb[labels_b[i]];
    if (labels_a[i] == labels_b[i]) ++agree;
  }
  long long chance = 0;  // n^2 * p_e
  for (const auto& [label, count] : ca) {
    if (const auto it = cb.find(label); it != cb.end()) chance += count * it->second;
  }
  const long long denom = n * n - chance;
  if (denom == 0) return agree == n ? 1.0 : 0.0;
  return static_cast<double>(n * agree - chance) / static_cast<double>(denom);
}

LabelRecord parse_vendor_report(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("vendor report: ") + e.what());
  }
  LabelRecord rec;
  auto take = [&rec](const std::string& vendor, const nlohmann::json& result) {
    if (result.is_string() && !result.get<std::string>().empty()) {
      rec.vendor_labels[vendor] = result.get<std::string>();
    }
  };

  if (doc.contains("labels")) {
    rec.sample_id = doc.value("sample_id", "");
    for (const auto& [vendor, label] : doc["labels"].items()) take(vendor, label);
  } else if (doc.contains("data") && doc["data"].contains("attributes")) {
    const auto& data = doc["data"];
    rec.sample_id = data.value("id", "");
    const auto& attrs = data["attributes"];
    if (rec.sample_id.empty()) rec.sample_id = attrs.value("sha256", "");
    if (attrs.contains("last_analysis_results")) {
      for (const auto& [vendor, entry] : attrs["last_analysis_results"].items()) {
        if (entry.contains("result")) take(vendor, entry["result"]);
      }
    }
  } else if (doc.contains("scans")) {
    rec.sample_id = doc.value("sha256", doc.value("md5", ""));
    for (const auto& [vendor, entry] : doc["scans"].items()) {
      if (entry.value("detected", true) && entry.contains("result")) take(vendor, entry["result"]);
    }
  } else {
    throw Error(ErrorCode::ParseError, "vendor report: unrecognized layout");
  }
  if (rec.sample_id.empty()) throw Error(ErrorCode::ParseError, "vendor report: missing sample id");
  if (rec.vendor_labels.empty()) {
    throw Error(ErrorCode::ParseError, "vendor report for " + rec.sample_id + " has no vendor labels");
  }
  return rec;
}

std::string format_refined(const std::vector<RefinedLabel>& labels) {
  std::ostringstream os;
  for (const auto& l : labels) os << l.sample_id << '\t' << l.label() << '\t' << l.confidence << '\n';
  return os.str();
}

}  // namespace visunpack::labelrefiner
