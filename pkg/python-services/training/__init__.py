"""Mini-batch training loop with sparse Adam"""
