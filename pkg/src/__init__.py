"""Dig-DEC 估计到决策实验室"""
