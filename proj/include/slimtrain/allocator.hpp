// Copyright 2026 The slimtrain Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SLIMTRAIN_ALLOCATOR_HPP_
#define SLIMTRAIN_ALLOCATOR_HPP_

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace slimtrain {

// Training allocates and frees the same activation-sized buffers every
// iteration. Keeping them on the heap instead of fresh mmaps avoids page
// faults; call once at the start of main.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace slimtrain

#endif  // SLIMTRAIN_ALLOCATOR_HPP_
