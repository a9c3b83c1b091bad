"""
智能体管理器
负责加载和管理 agents/configs 下的智能体预设
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from src.agents import COMPATIBLE, AgentConfig
from src.errors import ConfigError, IncompatibleAgentConfig

DEFAULT_CONFIG_DIR = Path(__file__).resolve().parent / "agents" / "configs"

# 散度模式 → Dig-DEC 使用的估计引擎
ENGINE_FOR_MODE = {mode: engine for engine, mode in COMPATIBLE.items()}

# 预设里只用于展示的字段
DISPLAY_FIELDS = ("description",)


class AgentManager:
    """智能体管理器类"""

    def __init__(self, config_dir: Optional[str] = None, defaults: Optional[Dict[str, Any]] = None):
        self.config_dir = str(config_dir or DEFAULT_CONFIG_DIR)
        self.defaults = defaults or {}
        self.agents: Dict[str, Dict[str, Any]] = {}
        self.roster: List[str] = []
        self.load_all_configs()

    def load_all_configs(self):
        """加载出场名单和所有智能体预设"""
        roster_file = os.path.join(self.config_dir, "roster.yaml")
        if os.path.exists(roster_file):
            with open(roster_file, "r", encoding="utf-8") as f:
                self.roster = list((yaml.safe_load(f) or {}).get("order", []))
        else:
            print(f"❌ 名单文件不存在: {roster_file}")

        for config_path in sorted(Path(self.config_dir).glob("*.yaml")):
            if config_path.name == "roster.yaml":
                continue
            with open(config_path, "r", encoding="utf-8") as f:
                try:
                    agent_config = yaml.safe_load(f) or {}
                except yaml.YAMLError as e:
                    mark = getattr(e, "problem_mark", None)
                    raise ConfigError(f"invalid YAML in {config_path}: {e}", line=mark.line + 1 if mark else None)
            self.agents[config_path.stem] = agent_config

    def get_agent_config(self, agent_id: str) -> Dict[str, Any]:
        """获取指定智能体的原始配置"""
        return self.agents.get(agent_id, {})

    def get_agent_description(self, agent_id: str) -> str:
        return self.get_agent_config(agent_id).get("description", "")

    def get_all_agent_ids(self) -> List[str]:
        return list(self.agents.keys())

    def get_roster(self) -> List[str]:
        """默认的对比顺序"""
        return list(self.roster)

    def build_config(self, agent_id: str, eta: Optional[float] = None, mode: Optional[str] = None) -> AgentConfig:
        """预设 + 全局求解/估计默认值 + 命令行覆盖 → AgentConfig

        覆盖 mode 时 Dig-DEC 智能体的引擎随之切换，保持引擎与散度配对。
        """
        if agent_id not in self.agents:
            raise ConfigError(f"unknown agent preset {agent_id!r}", key="agents")
        data = {k: v for k, v in self.agents[agent_id].items() if k not in DISPLAY_FIELDS}
        data.setdefault("name", agent_id)
        for section, global_key in (("saddle", "solver"), ("estimation", "estimation")):
            merged = dict(self.defaults.get(global_key) or {})
            merged.update(data.get(section) or {})
            data[section] = merged
        if eta is not None:
            data["eta"] = float(eta)
        if mode is not None:
            data["mode"] = mode
            if data.get("decision", "digdec") == "digdec":
                if mode not in ENGINE_FOR_MODE:
                    raise IncompatibleAgentConfig(f"mode must be one of {sorted(ENGINE_FOR_MODE)}, got {mode!r}")
                data["engine"] = ENGINE_FOR_MODE[mode]
        return AgentConfig.from_dict(data)

    def validate_config(self) -> bool:
        """验证配置的完整性"""
        for agent_id in self.roster:
            if agent_id not in self.agents:
                print(f"❌ 名单中的智能体缺少配置: {agent_id}")
                return False

        for agent_id, agent_config in self.agents.items():
            if "decision" not in agent_config:
                print(f"❌ 智能体 {agent_id} 缺少必需字段: decision")
                return False
            try:
                self.build_config(agent_id)
            except (ValueError, ConfigError) as e:
                print(f"❌ 智能体 {agent_id} 配置无效: {e}")
                return False

        print("✅ 配置验证通过")
        return True

    def print_config_summary(self):
        """打印配置摘要"""
        print("\n" + "=" * 60)
        print("智能体配置摘要")
        print("=" * 60)

        for agent_id, config in self.agents.items():
            decision = config.get("decision", "digdec")
            print(f"• {agent_id}: {decision} (η={config.get('eta', 1.0)}, "
                  f"mode={config.get('mode', 'none')}, engine={config.get('engine', 'bayes')})")

        print(f"\n对比顺序: {' → '.join(self.roster)}")
