from enum import Enum


class TauMode(str, Enum):
    """截断容差的解释方式"""
    RELATIVE = 'relative'  # τ_eff = τ·(1 + λ_n)
    ABSOLUTE = 'absolute'  # τ_eff = τ


class Damping(str, Enum):
    """Newton 步长策略，off 为标准 Newton 步，halving 为步长减半"""
    OFF = 'off'
    HALVING = 'halving'


class StudyKind(str, Enum):
    """算例类型"""
    KINETICS = 'kinetics'
    HEAT = 'heat'


class BasisStrategy(str, Enum):
    """基选取策略"""
    GREEDY = 'greedy'
    RANDOM = 'random'
