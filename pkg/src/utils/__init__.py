"""
Utilidades: datos, métricas, configuración, puntos de control, registro y gráficas
"""
