// Copyright 2026 The SpineSeg Authors. All Rights Reserved.
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

#pragma once

#include "spineseg/app/commands.hpp"
#include "spineseg/attention.hpp"
#include "spineseg/data/augment.hpp"
#include "spineseg/data/phantom.hpp"
#include "spineseg/data/slice_export.hpp"
#include "spineseg/data/volume_io.hpp"
#include "spineseg/fusion.hpp"
#include "spineseg/gradcheck.hpp"
#include "spineseg/loss.hpp"
#include "spineseg/metrics.hpp"
#include "spineseg/network.hpp"
