#pragma once

// Class-label registry and raw-label standardization for CICIoT2023.

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace iotids {

inline constexpr std::string_view kUnknownLabel = "unknown";

class LabelMap {
 public:
  // Canonical registry: 24 seen classes (fine-tuning) and 10 unseen (retrieval).
  static const LabelMap& cic_iot_2023() {
    static const LabelMap map{
        {"benign", "ddos ack fragmentation", "ddos icmp flood", "ddos icmp fragmentation",
         "ddos pshack flood", "ddos rst fin flood", "ddos synchronize flood",
         "ddos synonymousip flood", "ddos tcp flood", "ddos udp flood", "ddos udp fragmentation",
         "dns spoofing", "dos http flood", "dos synchronize flood", "dos tcp flood",
         "dos udp flood", "mirai greeth flood", "mirai greip flood", "mirai udp plain",
         "mitm arp spoofing", "recon host discovery", "recon os scan", "recon port scan",
         "vulnerability scan"},
        {"backdoor malware", "browser hijacking", "command injection", "ddos http flood",
         "ddos slow loris", "dictionary brute force", "recon ping sweep", "sql injection",
         "cross site scripting", "uploading attack"},
        // Token expansions applied after lowercasing and separator replacement.
        {{"syn", "synchronize"},
         {"rstfinflood", "rst fin flood"},
         {"udpplain", "udp plain"},
         {"arpspoofing", "arp spoofing"},
         {"hostdiscovery", "host discovery"},
         {"osscan", "os scan"},
         {"portscan", "port scan"},
         {"pingsweep", "ping sweep"},
         {"vulnerabilityscan", "vulnerability scan"},
         {"benigntraffic", "benign"},
         {"browserhijacking", "browser hijacking"},
         {"commandinjection", "command injection"},
         {"dictionarybruteforce", "dictionary brute force"},
         {"sqlinjection", "sql injection"},
         {"xss", "cross site scripting"},
         {"slowloris", "slow loris"}}};
    return map;
  }

  LabelMap(std::vector<std::string> seen, std::vector<std::string> unseen,
           std::map<std::string, std::string, std::less<>> expansions)
      : seen_(std::move(seen)), unseen_(std::move(unseen)), expansions_(std::move(expansions)) {
    std::sort(seen_.begin(), seen_.end());
    std::sort(unseen_.begin(), unseen_.end());
    for (const auto& s : seen_) registry_.insert(s);
    for (const auto& s : unseen_) {
      if (!registry_.insert(s).second) throw std::invalid_argument("class is both seen and unseen: " + s);
    }
  }

  // Lowercase, hyphens/underscores to spaces, whitespace collapsed, token expansions applied.
  std::string standardize(std::string_view raw) const {
    std::string lowered;
    lowered.reserve(raw.size());
    for (char c : raw) {
      if (c == '-' || c == '_') c = ' ';
      lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    std::istringstream words(lowered);
    std::string word;
    std::string out;
    while (words >> word) {
      if (auto it = expansions_.find(word); it != expansions_.end()) word = it->second;
      if (!out.empty()) out.push_back(' ');
      out += word;
    }
    return out;
  }

  bool is_seen(std::string_view label) const { return std::binary_search(seen_.begin(), seen_.end(), label); }
  bool is_unseen(std::string_view label) const { return std::binary_search(unseen_.begin(), unseen_.end(), label); }
  bool is_known(std::string_view label) const { return registry_.count(label) != 0; }

  // Sorted alphabetically.
  const std::vector<std::string>& seen_classes() const { return seen_; }
  const std::vector<std::string>& unseen_classes() const { return unseen_; }

  std::vector<std::string> all_classes() const { return {registry_.begin(), registry_.end()}; }

 private:
  std::vector<std::string> seen_;
  std::vector<std::string> unseen_;
  std::map<std::string, std::string, std::less<>> expansions_;
  std::set<std::string, std::less<>> registry_;
};

inline std::string standardize_label(std::string_view raw) { return LabelMap::cic_iot_2023().standardize(raw); }

}  // namespace iotids
