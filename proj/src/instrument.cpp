#include "thrifty/instrument.hpp"

namespace thrifty {

namespace {
thread_local ScopedMacTally* g_tally = nullptr;
thread_local ScopedBranchTrace* g_trace = nullptr;
}  // namespace

ScopedMacTally::ScopedMacTally() : previous_(g_tally) { g_tally = this; }
ScopedMacTally::~ScopedMacTally() { g_tally = previous_; }
ScopedMacTally* ScopedMacTally::active() { return g_tally; }

ScopedBranchTrace::ScopedBranchTrace() : previous_(g_trace) { g_trace = this; }
ScopedBranchTrace::~ScopedBranchTrace() { g_trace = previous_; }
ScopedBranchTrace* ScopedBranchTrace::active() { return g_trace; }

}  // namespace thrifty
